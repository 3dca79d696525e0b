import numpy as np
import pytest

from hsigen import scene as S


def box_doc(objects):
    return {"format": 1, "name": "test", "floor_extent": [-3, -3, 3, 3], "objects": objects}


def box_obj(oid, category, position, dims, rotation=(0, 0, 0)):
    return {"id": oid, "category": category, "primitives": [
        {"shape": "box", "position": list(position), "rotation": list(rotation),
         "dimensions": list(dims)}]}


@pytest.fixture
def unit_box_scene():
    return S.build_scene(box_doc([box_obj("box_0", "box", (0, 0, 0), (1, 1, 1))]))


def test_build_minimal_scene():
    scene = S.build_scene(box_doc([box_obj("chair_0", "chair", (0, 0, 0.25), (0.5, 0.5, 0.5))]))
    assert len(scene.objects) == 1
    assert scene.objects[0].category == "chair"


def test_duplicate_id_rejected():
    with pytest.raises(S.SceneError, match="duplicate id"):
        S.build_scene(box_doc([
            box_obj("chair_0", "chair", (0, 0, 0.25), (0.5, 0.5, 0.5)),
            box_obj("chair_0", "chair", (1, 1, 0.25), (0.5, 0.5, 0.5)),
        ]))


def test_object_outside_floor_rejected():
    with pytest.raises(S.SceneError, match="outside floor"):
        S.build_scene(box_doc([box_obj("b", "box", (3.2, 0, 0.25), (0.5, 0.5, 0.5))]))


def test_malformed_document():
    with pytest.raises(S.SceneError):
        S.build_scene({"format": 1, "objects": []})
    with pytest.raises(S.SceneError, match="format"):
        S.build_scene(box_doc([]) | {"format": 99})


def test_six_object_roundtrip():
    objs = [
        box_obj("sofa_0", "sofa", (0, -2, 0.2), (1.5, 0.6, 0.4)),
        box_obj("table_0", "table", (0, 0, 0.35), (0.8, 0.8, 0.7)),
        box_obj("chair_0", "chair", (-1.5, 0, 0.25), (0.5, 0.5, 0.5)),
        box_obj("chair_1", "chair", (1.5, 0, 0.25), (0.5, 0.5, 0.5), rotation=(0, 0, 0.7)),
        box_obj("window_0", "window", (0, 2.9, 1.5), (1.2, 0.1, 1.0)),
        box_obj("plant_0", "plant", (2.4, 2.4, 0.3), (0.3, 0.3, 0.6)),
    ]
    scene = S.build_scene(box_doc(objs))
    assert len(scene.objects) == 6
    doc2 = S.scene_to_doc(scene)
    scene2 = S.build_scene(doc2)
    assert sorted(o.category for o in scene.objects) == sorted(o.category for o in scene2.objects)
    for a, b in zip(scene.objects, scene2.objects):
        assert a.id == b.id
        for pa, pb in zip(a.primitives, b.primitives):
            np.testing.assert_allclose(pa.position, pb.position, atol=1e-12)
            np.testing.assert_allclose(pa.rotation, pb.rotation, atol=1e-12)


# ---------------------------------------------------------------------------
# signed distances

def test_sdf_box_outside(unit_box_scene):
    assert S.scene_sdf(unit_box_scene, (0, 0, 2)) == pytest.approx(1.5, abs=1e-12)


def test_sdf_box_inside(unit_box_scene):
    assert S.scene_sdf(unit_box_scene, (0, 0, 0)) == pytest.approx(-0.5, abs=1e-12)


def test_sdf_box_surface(unit_box_scene):
    assert abs(S.scene_sdf(unit_box_scene, (0.5, 0, 0))) <= 1e-9


def test_sdf_empty_scene_rejected():
    scene = S.Scene(objects=[], floor_extent=(-1, -1, 1, 1))
    with pytest.raises(S.SceneError):
        S.scene_sdf(scene, (0, 0, 0))


def _point_in_primitive(prim, p):
    local = prim.rotation.T @ (np.asarray(p) - prim.position)
    d = prim.dimensions
    if prim.shape == "box":
        return bool(np.all(np.abs(local) <= d / 2.0))
    if prim.shape == "cylinder":
        return bool(np.hypot(local[0], local[1]) <= d[0] and abs(local[2]) <= d[1] / 2.0)
    return bool(np.linalg.norm(local) <= d[0])


def test_sdf_sign_matches_containment_oracle():
    doc = box_doc([
        box_obj("a", "box", (0, 0, 0.5), (1, 1, 1)),
        {"id": "c", "category": "stool", "primitives": [
            {"shape": "cylinder", "position": [1.5, 0, 0.3], "dimensions": [0.3, 0.6]}]},
        {"id": "s", "category": "plant", "primitives": [
            {"shape": "sphere", "position": [-1.5, 0.5, 0.5], "dimensions": [0.4]}]},
    ])
    scene = S.build_scene(doc)
    rng = np.random.default_rng(0)
    pts = rng.uniform([-3, -3, -0.5], [3, 3, 2.0], size=(1000, 3))
    sdf = np.asarray(S.sdf_points(scene, pts))
    for p, v in zip(pts, sdf):
        if abs(v) < 1e-9:
            continue
        inside = p[2] < 0 or any(_point_in_primitive(prim, p)
                                 for o in scene.objects for prim in o.primitives)
        assert (v < 0) == inside


def test_union_sdf_below_each_primitive():
    doc = box_doc([
        box_obj("a", "box", (0, 0, 0.5), (1, 1, 1)),
        box_obj("b", "box", (0.4, 0.2, 0.6), (0.8, 0.8, 1.2)),
    ])
    scene = S.build_scene(doc)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-2, 2, size=(200, 3))
    union = np.asarray(S.sdf_points(scene, pts))
    for o in scene.objects:
        per = np.asarray(S.object_sdf(o, pts))
        assert np.all(union <= per + 1e-12)


# ---------------------------------------------------------------------------
# sampling

def test_sample_points_on_surface():
    scene = S.build_scene(box_doc([box_obj("a", "box", (0, 0, 0.5), (1, 1, 1))]))
    cloud = S.sample_scene_points(scene, 1024, seed=3)
    sdf = np.asarray(S.sdf_points(scene, cloud.points))
    assert len(cloud.points) == 1024
    assert np.max(np.abs(sdf)) <= 1e-6


def test_sample_deterministic(unit_box_scene):
    a = S.sample_scene_points(unit_box_scene, 256, seed=9)
    b = S.sample_scene_points(unit_box_scene, 256, seed=9)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.semantics, b.semantics)


def test_sample_area_weighted():
    scene = S.build_scene(box_doc([
        box_obj("a", "box", (-1.5, 0, 0.5), (1, 1, 1)),
        box_obj("b", "box", (1.5, 0, 0.5), (1, 1, 1)),
    ]))
    cloud = S.sample_scene_points(scene, 10000, seed=4)
    counts = {oid: int(np.sum(cloud.source_object == oid)) for oid in ("a", "b")}
    for oid in ("a", "b"):
        assert abs(counts[oid] - 5000) <= 0.05 * 5000


def test_sample_rejects_bad_count(unit_box_scene):
    with pytest.raises(S.SceneError):
        S.sample_scene_points(unit_box_scene, 0, seed=0)


def test_sample_floor_labels(unit_box_scene):
    cloud = S.sample_scene_points(unit_box_scene, 512, seed=0, include_floor=True)
    assert set(cloud.source_object) <= {"box_0", S.FLOOR_ID}
    floor_pts = cloud.points[cloud.source_object == S.FLOOR_ID]
    assert len(floor_pts) > 0
    assert np.allclose(floor_pts[:, 2], 0.0)


# ---------------------------------------------------------------------------
# global scene graph

def test_gsg_single_object():
    scene = S.build_scene(box_doc([box_obj("a", "box", (0, 0, 0.5), (1, 1, 1))]))
    g = S.global_scene_graph(scene)
    assert len(g.nodes) == 2
    assert ("a", "on", "floor") in g.edges


def test_gsg_near_edge_both_directions():
    scene = S.build_scene(box_doc([
        box_obj("a", "box", (0, 0, 0.5), (1, 1, 1)),
        box_obj("b", "box", (1.3, 0, 0.5), (1, 1, 1)),   # surface gap 0.3 m
    ]))
    g = S.global_scene_graph(scene)
    assert ("a", "near", "b") in g.edges
    assert ("b", "near", "a") in g.edges
    gap = S.surface_gap(scene, scene.objects[0], scene.objects[1])
    assert gap == pytest.approx(0.3, abs=0.05)


def test_gsg_near_threshold():
    scene = S.build_scene(box_doc([
        box_obj("a", "box", (-1.5, 0, 0.5), (1, 1, 1)),
        box_obj("b", "box", (1.5, 0, 0.5), (1, 1, 1)),   # gap 2.0 > 0.5
    ]))
    g = S.global_scene_graph(scene)
    assert ("a", "near", "b") not in g.edges


def test_gsg_left_right():
    scene = S.build_scene(box_doc([
        box_obj("a", "box", (-1, 0, 0.5), (1, 1, 1)),
        box_obj("b", "box", (1, 0, 0.5), (1, 1, 1)),
    ]))
    g = S.global_scene_graph(scene)
    assert ("a", "left of", "b") in g.edges
    assert ("b", "right of", "a") in g.edges
    assert ("a", "right of", "b") not in g.edges


def test_gsg_on_and_above():
    scene = S.build_scene(box_doc([
        box_obj("table", "table", (0, 0, 0.35), (1, 1, 0.7)),
        box_obj("book", "book", (0, 0, 0.75), (0.2, 0.3, 0.1)),     # resting on table
        box_obj("lamp", "lamp", (0.2, 0.2, 1.5), (0.2, 0.2, 0.4)),  # floating above
    ]))
    g = S.global_scene_graph(scene)
    assert ("book", "on", "table") in g.edges
    assert ("lamp", "above", "table") in g.edges
    assert ("lamp", "on", "table") not in g.edges
    # "on" implies overlap and a small vertical gap
    book = scene.object("book")
    table = scene.object("table")
    assert S._footprint_overlap(book, table) > 0
    assert abs(book.aabb()[0][2] - table.aabb()[1][2]) <= 0.02


def test_gsg_deterministic_and_monotone():
    base = [
        box_obj("a", "box", (-1, 0, 0.5), (1, 1, 1)),
        box_obj("b", "box", (1, 0, 0.5), (1, 1, 1)),
    ]
    g1 = S.global_scene_graph(S.build_scene(box_doc(base)))
    g2 = S.global_scene_graph(S.build_scene(box_doc(base)))
    assert g1.edges == g2.edges

    extended = base + [box_obj("c", "box", (0, 2, 0.5), (1, 1, 1))]
    g3 = S.global_scene_graph(S.build_scene(box_doc(extended)))
    object_edges = [(s, r, d) for (s, r, d) in g1.edges if d != "floor"]
    for edge in object_edges:
        assert edge in g3.edges
