import copy

import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from autolevels.bus import Relationship
from autolevels.errors import LoadError
from autolevels.taxonomy import (LevelKind, MeasureKind, build_tree, lint_autonomy_coverage,
                                 load_model, measure_kind, read_document, shipped_model_path)

SHIPPED = {
    "power": LevelKind.SUBSYSTEM,
    "power/generation": LevelKind.ASSEMBLY,
    "power/storage": LevelKind.ASSEMBLY,
    "power/distribution": LevelKind.ASSEMBLY,
    "power/generation/solar_drive": LevelKind.SUBASSEMBLY,
    "power/generation/solar_drive/motor": LevelKind.COMPONENT,
    "power/generation/solar_drive/sensor": LevelKind.COMPONENT,
    "power/generation/solar_drive/breaker": LevelKind.COMPONENT,
}


def shipped_doc():
    doc, _ = read_document(shipped_model_path())
    return doc


# -- build_tree -----------------------------------------------------------------

def test_shipped_model_loads():
    tree, graph = load_model()
    assert {p: n.level for p, n in tree.nodes.items()} == SHIPPED
    assert tree.root == "power"
    assert graph.is_superior("power/generation", "power/generation/solar_drive")
    assert graph.edge_between("power/generation", "power/storage").kind is Relationship.PEER_TO_PEER
    assert tree.ancestors("power/generation/solar_drive/breaker") == [
        "power/generation/solar_drive", "power/generation", "power"]


def test_single_root():
    tree, graph = build_tree({"nodes": [{"path": "sat", "level": "Mission"}]})
    assert len(tree) == 1 and tree.root == "sat" and len(graph) == 0


def test_level_skip_is_refused():
    spec = {"nodes": [{"path": "bus", "level": "System"},
                      {"path": "bus/eps", "level": "Assembly"}]}
    with pytest.raises(LoadError) as exc:
        build_tree(spec)
    assert exc.value.path == "bus/eps"
    tree, _ = build_tree({**spec, "allow_level_skip": True})
    assert tree["bus/eps"].level is LevelKind.ASSEMBLY


@pytest.mark.parametrize("nodes, path", [
    ([{"path": "a", "level": "System"}, {"path": "a", "level": "System"}], "a"),
    ([{"path": "a", "level": "System", "factors": {"interfaces": ["z"]}}], "a"),
    ([{"path": "a", "level": "System"}, {"path": "b/c", "level": "Subsystem"}], "b/c"),
    ([{"path": "a", "level": "Planet"}], "a"),
])
def test_load_errors_carry_path(nodes, path):
    with pytest.raises(LoadError) as exc:
        build_tree({"nodes": nodes})
    assert exc.value.path == path


def test_two_roots_refused():
    with pytest.raises(LoadError):
        build_tree({"nodes": [{"path": "a", "level": "System"}, {"path": "b", "level": "System"}]})


def test_measure_must_match_level():
    with pytest.raises(LoadError):
        build_tree({"nodes": [{"path": "a", "level": "System",
                               "factors": {"functional": {"measure": "TPM"}}}]})


def test_procedural_factor_is_stored():
    tree, _ = build_tree({"nodes": [{"path": "a", "level": "Component",
                                     "factors": {"procedural": ["power on", "self test"]}}]})
    assert tree["a"].factors.procedural == ("power on", "self test")


# -- measure_kind ---------------------------------------------------------------

def test_measure_system():
    assert measure_kind(LevelKind.SYSTEM) is MeasureKind.MOP


def test_measure_subsystem():
    assert measure_kind("Subsystem") is MeasureKind.TPM


def test_measure_component():
    assert measure_kind(LevelKind.COMPONENT) is None


def test_measure_full_mapping():
    got = [measure_kind(l) for l in LevelKind]
    assert got == [MeasureKind.MOO, MeasureKind.MOE, MeasureKind.MOC, MeasureKind.MOP, MeasureKind.TPM,
                   None, None, None]


# -- lint -------------------------------------------------------------------------

def test_shipped_model_lints_clean():
    tree, _ = load_model()
    assert lint_autonomy_coverage(tree) == []


def test_removed_breaker_autonomy(fixtures_dir):
    tree, _ = load_model(fixtures_dir / "lint_missing_autonomy.yaml")
    findings = lint_autonomy_coverage(tree)
    assert [(f.kind, f.path) for f in findings] == [("a", "power/generation/solar_drive/breaker")]


def test_stripped_drive_tags(fixtures_dir):
    tree, _ = load_model(fixtures_dir / "lint_untagged_drive.yaml")
    findings = lint_autonomy_coverage(tree)
    assert [(f.kind, f.path) for f in findings] == [("b", "power/generation/solar_drive")]
    assert "untagged" in findings[0].message


@pytest.mark.parametrize("fixture, kind", [("lint_no_crosstalk.yaml", "c"),
                                           ("lint_undeclared_inputs.yaml", "d")])
def test_other_seeded_defects(fixtures_dir, fixture, kind):
    tree, _ = load_model(fixtures_dir / fixture)
    assert [f.kind for f in lint_autonomy_coverage(tree)] == [kind]


def test_undeclared_publish_topic():
    doc = shipped_doc()
    breaker = next(n for n in doc["nodes"] if n["path"].endswith("breaker"))
    breaker["loop"]["autonomy"]["publishes"] = ["acks"]
    tree, _ = build_tree(doc)
    [f] = lint_autonomy_coverage(tree)
    assert f.kind == "c" and "power/fault" in f.message


def test_undeclared_guard_channel():
    doc = shipped_doc()
    breaker = next(n for n in doc["nodes"] if n["path"].endswith("breaker"))
    breaker["loop"]["autonomy"]["inputs"] = {"current": "A"}
    tree, _ = build_tree(doc)
    [f] = lint_autonomy_coverage(tree)
    assert f.kind == "d" and "soc" in f.message


# -- properties ---------------------------------------------------------------------

LEVELS = list(LevelKind)


@st.composite
def trees(draw):
    """Random well-formed trees: each child sits exactly one level below its parent."""
    top = draw(st.integers(0, len(LEVELS) - 1))
    nodes = [{"path": "root", "level": LEVELS[top].value}]
    frontier = [("root", top)]
    for _ in range(draw(st.integers(0, 12))):
        parent, rank = draw(st.sampled_from(frontier))
        if rank + 1 >= len(LEVELS):
            continue
        path = f"{parent}/n{len(nodes)}"
        nodes.append({"path": path, "level": LEVELS[rank + 1].value})
        frontier.append((path, rank + 1))
    paths = [n["path"] for n in nodes]
    for n in nodes:
        peers = draw(st.lists(st.sampled_from(paths), max_size=2))
        n["factors"] = {"interfaces": sorted({p for p in peers if p != n["path"]})}
    return {"nodes": nodes}


@given(trees())
def test_path_bijection(spec):
    tree, _ = build_tree(spec)
    paths = [n["path"] for n in spec["nodes"]]
    assert sorted(tree.nodes) == sorted(paths)
    assert all(tree[p].path == p for p in paths)
    # every non-root node reachable once through its parent's children
    listed = [c for kids in tree.children.values() for c in kids]
    assert sorted(listed + [tree.root]) == sorted(paths)


@given(trees())
def test_graph_rebuild_is_identical(spec):
    _, g1 = build_tree(copy.deepcopy(spec))
    _, g2 = build_tree(copy.deepcopy(spec))
    assert g1 == g2
    for n in spec["nodes"]:
        if "/" in n["path"]:
            assert g1.is_superior(n["path"].rsplit("/", 1)[0], n["path"])


def test_lint_idempotent(fixtures_dir):
    for f in sorted(fixtures_dir.glob("lint_*.yaml")):
        tree, _ = load_model(f)
        assert lint_autonomy_coverage(tree) == lint_autonomy_coverage(tree)


def test_model_documents_are_yaml(fixtures_dir):
    for f in fixtures_dir.glob("lint_*.yaml"):
        assert isinstance(yaml.safe_load(f.read_text()), dict)
