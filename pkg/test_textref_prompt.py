"""Tests for reference serialization and prompt assembly"""

import pytest

from conftest import read_fixture
from errors import MalformedFileError
from geometry import CameraIntrinsics, CameraPose
from object_extract import Box, SceneObject, VerticalCylinder
from textref_prompt import (
    CameraView,
    GR3DBundle,
    PromptMode,
    attach_question,
    build_description_prompt,
    build_prompt,
    parse_refs,
    serialize_refs,
)

QUESTION = "How many chairs are in this room?"
CAMERA = CameraView(CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480), CameraPose.identity())


def test_reference_lines(reference_objects):
    block = serialize_refs(list(reversed(reference_objects)))
    assert block.lines == (
        "[1] box center=(0.50,1.00,0.40) size=(1.00,0.60,0.80)",
        "[2] cylinder center=(2.00,3.00) radius=0.45 z=[0.00,0.75]",
    )
    assert block.ids == [1, 2]


def test_references_carry_no_category_names(reference_objects):
    text = serialize_refs(reference_objects).text
    assert "cabinet" not in text and "table" not in text


def test_negative_zero_folds():
    block = serialize_refs([SceneObject(3, Box((-0.001, 0.0, 0.5), (0.3, 0.3, 1.0)), 9, 4)])
    assert block.lines == ("[3] box center=(0.00,0.00,0.50) size=(0.30,0.30,1.00)",)


def test_empty_references():
    block = serialize_refs([])
    assert block.empty
    assert "References: none" in build_prompt(block, None, QUESTION)


def test_parse_refs_recovers_primitives(reference_objects):
    parsed = parse_refs(serialize_refs(reference_objects).lines)
    assert parsed == [(o.id, o.primitive) for o in reference_objects]


def test_parse_refs_rejects_garbage():
    with pytest.raises(MalformedFileError):
        parse_refs(["[1] sphere center=(0,0,0)"])


@pytest.mark.parametrize("mode, fixture", [
    (PromptMode.FULL, "prompt_full.txt"),
    (PromptMode.NO_ANNOTATION, "prompt_no_annotation.txt"),
    (PromptMode.CAMERA_PARAMS, "prompt_camera_params.txt"),
    (PromptMode.SCENE_DESCRIPTION, "prompt_scene_description.txt"),
])
def test_prompt_matches_fixture(mode, fixture, reference_objects, reference_room):
    prompt = build_prompt(serialize_refs(reference_objects), reference_room, QUESTION, mode, cameras=[CAMERA])
    assert prompt == read_fixture(fixture)


def test_prompt_is_deterministic(reference_objects, reference_room):
    refs = serialize_refs(reference_objects)
    assert build_prompt(refs, reference_room, QUESTION) == build_prompt(refs, reference_room, QUESTION)


def test_modes_accept_plain_strings(reference_objects, reference_room):
    refs = serialize_refs(reference_objects)
    assert build_prompt(refs, reference_room, QUESTION, "full") == build_prompt(refs, reference_room, QUESTION)


def test_unknown_room_and_polygon(reference_objects, reference_room):
    refs = serialize_refs(reference_objects)
    assert "Room size: unknown." in build_prompt(refs, None, QUESTION)
    with_polygon = build_prompt(refs, reference_room, QUESTION, include_polygon=True)
    assert "Room boundary polygon (x,y vertices in order): (0.00,0.00) (4.00,0.00) (4.00,5.00) (0.00,5.00)" \
        in with_polygon


def test_attach_question_matches_build(reference_objects, reference_room):
    refs = serialize_refs(reference_objects)
    base = build_prompt(refs, reference_room)
    assert attach_question(base, QUESTION) == build_prompt(refs, reference_room, QUESTION)
    assert attach_question(base, "  ") == base


def test_description_prompt(reference_objects, reference_room):
    prompt = build_description_prompt("A cabinet [1] stands near a round table [2].",
                                      serialize_refs(reference_objects), reference_room, QUESTION)
    assert "Scene description:\nA cabinet [1] stands near a round table [2]." in prompt
    assert prompt.endswith('Question: How many chairs are in this room?\n'
                           'Give your final answer on a single line beginning with "ANSWER:".\n')


def test_bundle_round_trip_and_unreferenced_ids(reference_objects, reference_room):
    refs = serialize_refs(reference_objects)
    bundle = GR3DBundle("fixture", refs.lines, ("a.png",), reference_room, 1.0, "full",
                        build_prompt(refs, reference_room), annotated_ids={0: [1, 2], 1: [2]})
    assert bundle.unreferenced_ids() == []
    assert GR3DBundle.from_dict(bundle.to_dict()) == bundle
    bundle.annotated_ids[1].append(7)
    assert bundle.unreferenced_ids() == [7]


def test_cylinder_reference_precision():
    block = serialize_refs([SceneObject(1, VerticalCylinder((1.234, 5.678), 0.3333, 0.0, 0.7449), 9, 10)], precision=3)
    assert block.lines == ("[1] cylinder center=(1.234,5.678) radius=0.333 z=[0.000,0.745]",)
