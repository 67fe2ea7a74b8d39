"""The two-frame example documented in docs/FORMATS.md, byte for byte."""

from __future__ import annotations

import numpy as np

from terrain_sg.cli import main
from terrain_sg.core import CameraIntrinsics, Pose, TerrainClass
from terrain_sg.dataset import FrameRecord, MaskRecord, write_scene

EXPECTED_MAP = (
    '{"embedding_dim":3,"format_version":1,"kind":"semantic_map","points":['
    '{"p":[0.25,1.25,4.25],"s":[[0,2]],"t":0},{"p":[0.75,1.25,4.25],"s":[[0,2]],"t":0},'
    '{"p":[-0.25,-0.25,4.25],"s":[[1,2]],"t":null},{"p":[0.25,-0.25,4.25],"s":[[1,2]],"t":null},'
    '{"p":[-0.25,0.25,4.25],"s":[[1,2]],"t":null},{"p":[0.25,0.25,4.25],"s":[[1,4]],"t":null}],'
    '"terrain_names":{"0":"sidewalk"},"vectors":[[0.0,0.0,1.0],[1.0,0.0,0.0],[0.99,0.14106736,0.0]],'
    '"voxel_leaf":0.5}\n'
)


def two_frame_scene(root):
    intr = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)
    bench = [(-0.2, -0.1, 4.0), (0.2, -0.1, 4.0), (-0.2, 0.1, 4.0), (0.2, 0.1, 4.0), (0.0, 0.0, 4.1)]
    pts = np.array(bench + [(0.0, 1.0, 4.0), (0.6, 1.0, 4.0)])
    frames = []
    for k, eid in enumerate(["obj:bench:0", "obj:bench:1"]):
        masks = (
            MaskRecord(((0.0, 70.0), (100.0, 70.0), (100.0, 100.0), (0.0, 100.0)), "terrain:sidewalk", 0),
            MaskRecord(((40.0, 40.0), (60.0, 40.0), (60.0, 60.0), (40.0, 60.0)), eid, None),
        )
        frames.append((FrameRecord(0.5 * k, Pose(), intr, f"lidar/{k:06d}.bin", masks, None), pts))
    embeddings = {
        "terrain:sidewalk": np.array([0.0, 0.0, 1.0]),
        "obj:bench:0": np.array([1.0, 0.0, 0.0]),
        "obj:bench:1": np.array([0.99, 0.14106736, 0.0]),
    }
    return write_scene(
        root,
        embedding_dim=3,
        terrain_classes=[TerrainClass("sidewalk", 0)],
        terrain_embedding_ids={0: "terrain:sidewalk"},
        frames=frames,
        embeddings=embeddings,
    )


def test_documented_lidar_bytes(tmp_path):
    root = two_frame_scene(tmp_path / "two")
    raw = (root / "lidar" / "000000.bin").read_bytes()
    assert len(raw) == 84
    assert raw[:12] == bytes.fromhex("cdcc4cbe cdccccbd 00008040".replace(" ", ""))


def test_documented_map_bytes(tmp_path):
    root = two_frame_scene(tmp_path / "two")
    assert main(["build-map", "--scene", str(root), "--out", str(tmp_path / "map.json")]) == 0
    assert (tmp_path / "map.json").read_text(encoding="utf-8") == EXPECTED_MAP
