"""Smoke test for the gentle_reach_py extension.

Builds the extension with cargo (unless GENTLE_REACH_PY_LIB points at a built
library), loads it and exercises each binding once.
"""

import importlib.util
import json
import os
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def built_library():
    override = os.environ.get("GENTLE_REACH_PY_LIB")
    if override:
        return pathlib.Path(override)
    subprocess.run(
        ["cargo", "build", "--release", "-p", "gentle-reach-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    target = pathlib.Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target")) / "release"
    for name in ("libgentle_reach_py.so", "libgentle_reach_py.dylib", "gentle_reach_py.dll"):
        if (target / name).exists():
            return target / name
    sys.exit(f"no built library in {target}")


def load(lib):
    tmp = pathlib.Path(tempfile.mkdtemp())
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    dest = tmp / f"gentle_reach_py{suffix}"
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("gentle_reach_py", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    gr = load(built_library())

    schematic = gr.generate_scene(7)
    assert "format_version" in schematic and "grid" in schematic
    assert gr.generate_scene(7) == schematic

    obstacles, occ, grid = gr.scene_summary(7)
    assert 25 <= obstacles <= 28, obstacles
    assert 0.42 <= occ <= 0.52, occ
    assert grid.strip()

    count = int(gr.configuration_count())
    assert count > 10**20

    z, p = gr.z_test(36, 40, 20, 40)
    assert abs(z - 3.9036) < 1e-3, z
    assert p < 1e-4
    assert gr.z_test(0, 40, 0, 40) == (0.0, 1.0)

    tactile = gr.zero_force_tactile()
    assert len(tactile) == 300
    assert tuple(tactile[:3]) == (0, 127, 127)

    echoed = json.loads(gr.parse_teleop_command('{"version":1,"type":"start_episode","seed":3}'))
    assert echoed == {"version": 1, "type": "start_episode", "seed": 3}
    try:
        gr.parse_teleop_command('{"type":"save_episode"}')
    except ValueError:
        pass
    else:
        raise AssertionError("missing version accepted")

    result = gr.run_expert(7, rehearse=False)
    assert result["verdict"] in {"success", "timeout", "excessive_net", "excessive_peak"}
    assert result["ticks"] > 0

    print("python smoke test passed")


if __name__ == "__main__":
    main()
