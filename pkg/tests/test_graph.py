import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dagar.errors import ParseError, StructureError, ValidationError
from dagar.graph import (
    complete_graph,
    connected_components,
    coordinate_sum_ordering,
    from_edge_list,
    grid_graph,
    is_connected,
    load_us48,
    make_ordering,
    parse_graph_spec,
    path_graph,
    random_connected_graph,
    random_tree,
    read_edge_list,
    second_order_graph,
    shortest_path_distances,
    star_graph,
    tree_traversal_ordering,
    write_edge_list,
)
from dagar.linalg import make_rng


def one_based(g):
    return {i + 1: [j + 1 for j in g.adjacency[i]] for i in range(g.k)}


def test_path_small():
    g = path_graph(3)
    assert one_based(g) == {1: [2], 2: [1, 3], 3: [2]}
    assert g.e == 2


def test_path_single_vertex():
    g = path_graph(1)
    assert one_based(g) == {1: []}
    assert g.e == 0


def test_path_100_degrees():
    d = path_graph(100).degrees
    assert np.sum(d == 1) == 2 and np.sum(d == 2) == 98


def test_grid_counts():
    g = grid_graph(2, 2)
    assert g.e == 4 and np.all(g.degrees == 2)
    g = grid_graph(10, 10)
    assert g.k == 100 and g.e == 10 * 9 + 10 * 9


def test_degenerate_grid_is_path():
    assert grid_graph(1, 5).adjacency == path_graph(5).adjacency


def test_edge_list_dedup_and_disconnected():
    assert from_edge_list(2, [(1, 2), (2, 1)]).e == 1
    g = from_edge_list(3, [(1, 3)])
    assert not is_connected(g)


def test_edge_list_rejects_self_loop_and_range():
    with pytest.raises(ValidationError):
        from_edge_list(3, [(1, 1)])
    with pytest.raises(ValidationError):
        from_edge_list(3, [(1, 4)])


def test_us48_bundled():
    g = load_us48()
    assert g.k == 48 and is_connected(g)
    assert g.labels[0] == "AL" and g.coords.shape == (48, 2)
    lab = {c: i for i, c in enumerate(g.labels)}
    # Maine borders only New Hampshire
    assert g.degrees[lab["ME"]] == 1 and g.has_edge(lab["ME"], lab["NH"])
    # point contact only, not a shared border
    assert not g.has_edge(lab["AZ"], lab["CO"])


def test_edge_list_roundtrip(tmp_path):
    g = grid_graph(3, 4)
    p = tmp_path / "g.txt"
    write_edge_list(g, p)
    h = read_edge_list(p)
    assert h.adjacency == g.adjacency


def test_edge_list_parse_error_has_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("3 2\n1 2\n2 x\n")
    with pytest.raises(ParseError) as exc:
        read_edge_list(p)
    assert exc.value.line == 3


def test_parse_graph_spec():
    assert parse_graph_spec("path:7").k == 7
    assert parse_graph_spec("grid:3x4").k == 12
    assert parse_graph_spec("us48").k == 48
    with pytest.raises(ValidationError):
        parse_graph_spec("nowhere.txt")
    with pytest.raises(ValidationError):
        parse_graph_spec("grid:ax2")


def test_second_order_path():
    h = second_order_graph(path_graph(4))
    assert h.has_edge(0, 2) and h.has_edge(1, 3) and h.e == 5


def test_second_order_complete_and_star():
    assert second_order_graph(complete_graph(3)).adjacency == complete_graph(3).adjacency
    h = second_order_graph(star_graph(4))
    assert h.e == 10


def test_coordinate_sum_grid_2x2():
    g = grid_graph(2, 2)
    o = coordinate_sum_ordering(g)
    assert o.pi[0] == 0 and o.pi[-1] == 3
    assert list(o.directed_counts[o.pi]) == [0, 1, 1, 2]


def test_coordinate_sum_path_identity():
    o = coordinate_sum_ordering(path_graph(6))
    assert list(o.pi) == list(range(6))


def test_coordinate_sum_decreasing_and_difference():
    g = grid_graph(3, 3)
    o = coordinate_sum_ordering(g, decreasing=True)
    assert o.pi[0] == 8
    d = coordinate_sum_ordering(g, "difference")
    assert d.directed_counts.sum() == g.e


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 15), st.integers(0, 10_000))
def test_directed_counts_sum_to_edges(k, seed):
    rng = make_rng(seed)
    g = random_connected_graph(k, rng, p=0.3)
    pi = rng.permutation(k)
    o = make_ordering(g, pi)
    assert o.directed_counts.sum() == g.e
    # every directed neighbour precedes its vertex
    for i in range(k):
        for j in o.directed_neighbors[i]:
            assert o.pi_inverse[j] < o.pi_inverse[i]


def test_tree_traversal_path_and_star():
    o = tree_traversal_ordering(path_graph(5), 0)
    assert list(o.pi) == [0, 1, 2, 3, 4]
    assert [list(n) for n in o.directed_neighbors] == [[], [0], [1], [2], [3]]
    s = tree_traversal_ordering(star_graph(4), 0)
    assert all(list(s.directed_neighbors[i]) == [0] for i in range(1, 5))


def test_tree_traversal_random_tree():
    g = random_tree(20, make_rng(3))
    o = tree_traversal_ordering(g, 5)
    counts = o.directed_counts
    assert counts[5] == 0 and np.all(np.delete(counts, 5) == 1)


def test_tree_traversal_rejects_cycle():
    with pytest.raises(StructureError):
        tree_traversal_ordering(grid_graph(2, 2), 0)


def test_shortest_paths():
    assert shortest_path_distances(path_graph(4))[0, 3] == 3
    assert shortest_path_distances(grid_graph(3, 3))[0, 8] == 4
    d = shortest_path_distances(complete_graph(3))
    assert np.all(d[~np.eye(3, dtype=bool)] == 1)
    with pytest.raises(StructureError):
        shortest_path_distances(from_edge_list(3, [(1, 2)]))


def test_connectivity():
    assert is_connected(path_graph(3))
    assert not is_connected(from_edge_list(2, []))
    n, labels = connected_components(from_edge_list(4, [(1, 2), (3, 4)]))
    assert n == 2 and labels[0] == labels[1] != labels[2]
