# Copyright 2026 The mapfuse Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python bindings of the mapfuse library."""

from ._core import (
    MapfuseError,
    box_scene,
    bundle,
    compress,
    footprint_arrays,
    gamma_cdf,
    gamma_params,
    gamma_quantile,
    merge,
    procrustes_align,
    project,
    run_cli,
)

__all__ = [
    "MapfuseError",
    "box_scene",
    "bundle",
    "compress",
    "footprint_arrays",
    "gamma_cdf",
    "gamma_params",
    "gamma_quantile",
    "merge",
    "procrustes_align",
    "project",
    "run_cli",
]
