"""Shared fixtures: configs, a small synthetic scene and its export, the mock chat endpoint"""

import json
import os
import shutil

import numpy as np
import pytest
from PIL import Image

from cloud_builder import build_cloud
from config import PipelineConfig
from mock_server import MockServer, MockState
from object_extract import Box, RoomBoundary, SceneObject, VerticalCylinder
from scene_ingest import DepthMap, encode_depth, encode_labels, load_manifest
from synth_oracle import SceneParams, export_manifest, generate_scene

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


def varied_params(seed: int) -> SceneParams:
    """3 to 7 objects seen by 4 to 8 cameras, cycling with the seed"""
    return SceneParams(n_boxes=2 + seed % 4, n_cylinders=1 + seed % 2, n_cameras=4 + seed % 5)


@pytest.fixture
def work_config(tmp_path):
    config = PipelineConfig()
    config.paths.work_dir = str(tmp_path / "work")
    config.paths.cache_dir = str(tmp_path / "work" / "cache")
    return config


@pytest.fixture(scope="session")
def scene0():
    return generate_scene(0, SceneParams())


@pytest.fixture(scope="session")
def exported_scene(tmp_path_factory, scene0):
    out_dir = tmp_path_factory.mktemp("synth_0000")
    return export_manifest(scene0, str(out_dir), scene_id="synth_0000")


@pytest.fixture(scope="session")
def scene0_cloud(exported_scene):
    manifest = load_manifest(exported_scene)
    return manifest, build_cloud(manifest, stride=2)


@pytest.fixture
def minimal_manifest(tmp_path):
    """One 4x3 frame: a cabinet pixel block at 1 m in front of a wall at 2 m, one invalid pixel"""
    shutil.copy(fixture_path("minimal_manifest.json"), tmp_path / "manifest.json")
    for sub in ("images", "depth", "labels"):
        os.makedirs(tmp_path / sub)
    depths = np.full((3, 4), 2.0)
    depths[1, 1:3] = 1.0
    depths[0, 3] = 0.0
    labels = np.full((3, 4), 2, dtype=np.uint16)
    labels[1, 1:3] = 4
    labels[2, :] = 1
    encode_depth(DepthMap.from_array(depths), str(tmp_path / "depth" / "000.png"))
    encode_labels(labels, str(tmp_path / "labels" / "000.png"))
    Image.new("RGB", (4, 3), (128, 128, 128)).save(tmp_path / "images" / "000.png")
    return str(tmp_path / "manifest.json")


@pytest.fixture
def reference_objects():
    return [
        SceneObject(1, Box((0.5, 1.0, 0.4), (1.0, 0.6, 0.8)), 40, 4),
        SceneObject(2, VerticalCylinder((2.0, 3.0), 0.45, 0.0, 0.75), 25, 10),
    ]


@pytest.fixture
def reference_room():
    return RoomBoundary(((0.0, 0.0), (4.0, 0.0), (4.0, 5.0), (0.0, 5.0)), 20.0, 2.6)


@pytest.fixture
def mock_server():
    server = MockServer(MockState()).start()
    yield server
    server.stop()


def read_fixture(name: str) -> str:
    with open(fixture_path(name), "r", encoding="utf-8") as f:
        return f.read()


def read_json(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
