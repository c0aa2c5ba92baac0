# Copyright 2026 The htsr-decay Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Heavy-tailed spectral analysis and module-wise weight decay scheduling."""

import json
import os

from ._core import (
    DivergenceError,
    FormatError,
    HtsrError,
    ScheduleError,
    SpectralError,
    analyze_module,
    assign_linear,
    assign_log2,
    assign_sigmoid_like,
    assign_sqrt,
    compute_esd,
    fit_power_law,
    frobenius_norm,
    hill_alpha,
    lr_at,
    parse_module_name,
    read_checkpoint,
    spectral_norm,
    write_checkpoint,
)
from . import _core


def train(config, base_dir="."):
    """Run one experiment from a config dict (same layout as the CLI JSON).

    Returns per-step losses, learning rates and gradient norms, every
    recompute step's decay plan and reports, and the final validation loss.
    """
    return _core._train_json(json.dumps(config), os.fspath(base_dir))


__all__ = [
    "DivergenceError",
    "FormatError",
    "HtsrError",
    "ScheduleError",
    "SpectralError",
    "analyze_module",
    "assign_linear",
    "assign_log2",
    "assign_sigmoid_like",
    "assign_sqrt",
    "compute_esd",
    "fit_power_law",
    "frobenius_norm",
    "hill_alpha",
    "lr_at",
    "parse_module_name",
    "read_checkpoint",
    "spectral_norm",
    "train",
    "write_checkpoint",
]
