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

import json
import math
import pathlib

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.transform import Rotation

import mapfuse

DATA = pathlib.Path(__file__).resolve().parents[1] / "data"


def test_project_matches_pinhole():
    rot = Rotation.from_rotvec([0.1, -0.2, 0.3]).as_matrix()
    t = np.array([0.2, -0.1, 4.0])
    x = np.array([0.3, 0.5, 1.0])
    c = rot @ x + t
    np.testing.assert_allclose(mapfuse.project(rot, t, x), c[:2] / c[2], rtol=0, atol=1e-15)


def test_bundle_matches_reference_minimum():
    golden = json.loads((DATA / "golden.json").read_text())
    _, report = mapfuse.bundle((DATA / "map_noisy.json").read_text(), tolerance=1e-9)
    assert report["converged"]
    assert report["squared_residual"] == pytest.approx(golden["noisy_a2"], rel=1e-6)


def test_gamma_matches_scipy():
    alpha, nu = mapfuse.gamma_params(0.05, 46)
    assert alpha == pytest.approx(200.0)
    assert nu == 23.0
    for x in [0.05, 0.1, 0.115, 0.2]:
        assert mapfuse.gamma_cdf(alpha, nu, x) == pytest.approx(stats.gamma.cdf(x, nu, scale=1 / alpha), abs=1e-12)
    assert mapfuse.gamma_quantile(alpha, nu, 0.99) == pytest.approx(stats.gamma.ppf(0.99, nu, scale=1 / alpha))


def test_procrustes_recovers_similarity():
    rng = np.random.default_rng(3)
    src = rng.normal(size=(10, 3))
    rot = Rotation.from_rotvec([0.4, 0.2, -0.7]).as_matrix()
    dst = 1.7 * src @ rot.T + np.array([1.0, -2.0, 0.5])
    scale, r, t, rmse = mapfuse.procrustes_align(src, dst)
    assert scale == pytest.approx(1.7)
    np.testing.assert_allclose(r, rot, atol=1e-10)
    np.testing.assert_allclose(t, [1.0, -2.0, 0.5], atol=1e-10)
    assert rmse < 1e-10


def test_compress_and_merge_box_scene():
    maps = mapfuse.box_scene(n_points=30, n_cameras=6, seed=4, sigma=0.01)
    footprints = []
    for m in maps:
        optimized, report = mapfuse.bundle(m, tolerance=1e-10)
        footprints.append(mapfuse.compress(optimized, list(range(8))))
    arrays = mapfuse.footprint_arrays(footprints[0])
    assert arrays["r"].shape == (24, 24)
    assert np.allclose(np.tril(arrays["r"], -1), 0.0)
    result = mapfuse.merge(footprints, sigma=0.01)
    assert result["q"].shape == (8, 3)
    assert result["dof_delta"] == 3 * 8 * 2 - 14
    assert result["a_tilde"] >= -1e-12
    assert 0.0 <= result["p_value"] <= 1.0


def test_errors_carry_kind():
    with pytest.raises(mapfuse.MapfuseError, match="unknown_anchor"):
        mapfuse.compress(mapfuse.bundle(mapfuse.box_scene(n_points=20, n_cameras=5, n_maps=1)[0])[0], [0, 1, 999])


def test_cli_in_process(tmp_path):
    code, out, _ = mapfuse.run_cli(["bundle", str(tmp_path / "missing.json")])
    assert code == 1
    assert json.loads(out)["error"]["kind"] == "io"
    code, out, _ = mapfuse.run_cli(["bundle", str(DATA / "map_noiseless.json")])
    assert code == 0
    assert json.loads(out)["report"]["squared_residual"] < 1e-16
    assert math.isfinite(json.loads(out)["report"]["gradient_norm"])
