import numpy as np
import pytest

from mnsga_nas.search_space import Genome, OpKind, decode, encode, parse_architecture, random_genome
from mnsga_nas.weight_mapping import (
    MAGIC,
    STEM_KEY,
    ContainerError,
    MappingError,
    SupernetWeights,
    channel_map,
    container_data_size,
    depth_map,
    l1_channel_norms,
    map_individual,
    operation_map,
    read_container,
    select_channels,
    slot_dims,
    slot_key,
    write_container,
)


@pytest.fixture(scope="module")
def supernet(small_space):
    return SupernetWeights.build(small_space, seed=11)


def oracle_topk(norms, r):
    """Full sort by (-norm, index), first r, ascending."""
    order = sorted(range(len(norms)), key=lambda i: (-float(norms[i]), i))
    return sorted(order[:r])


def test_norm_example():
    t = np.zeros((2, 1, 1, 3))
    t[0, 0, 0] = [1, -1, 1]
    assert l1_channel_norms(t).tolist() == [3.0, 0.0]
    with pytest.raises(ValueError):
        l1_channel_norms(np.zeros((2, 3)))


def test_select_examples():
    norms = np.array([0.5, 2.0, 2.0, 0.1])
    assert select_channels(None, 2, norms) == [1, 2]
    assert select_channels(None, 4, norms) == [0, 1, 2, 3]
    assert select_channels(None, 1, norms) == [1]
    with pytest.raises(MappingError):
        select_channels(None, 5, norms)
    with pytest.raises(MappingError):
        select_channels(None, 0, norms)


def test_channel_map_example():
    t = np.array([0.1, 5.0, 3.0, 2.0]).reshape(4, 1, 1, 1)
    w, out_idx, in_idx = channel_map(t, 2, 1)
    assert w.ravel().tolist() == [5.0, 3.0]
    assert out_idx == [1, 2] and in_idx == [0]


def test_channel_map_rejects_bad_inputs():
    t = np.ones((4, 2, 1, 1))
    with pytest.raises(MappingError):
        channel_map(t, 2, 3)
    with pytest.raises(MappingError):
        channel_map(t, 2, in_indices=[0, 2])


def test_depth_map():
    assert depth_map(["a", "b", "c"], 2) == ["a", "b"]
    with pytest.raises(MappingError):
        depth_map(["a"], 2)


def test_operation_map(supernet):
    t = operation_map(supernet, 3, 1, OpKind.GBe4)
    assert t is supernet[slot_key(3, 1, OpKind.GBe4)]
    with pytest.raises(MappingError, match="Identity"):
        operation_map(supernet, 3, 1, OpKind.Identity)
    with pytest.raises(MappingError):
        operation_map(supernet, 2, 5, OpKind.GBe1)


def test_supernet_shapes_and_readonly(small_space, supernet):
    dims = {k: d for k, d, _ in slot_dims(small_space)}
    assert supernet.keys() == list(dims)
    assert supernet[STEM_KEY].shape == (16, 3, 3, 3)
    # stage 2 passes the 16 stem channels through its first slot
    assert supernet[slot_key(2, 0, OpKind.GBe1)].shape == (16, 16, 3, 3)
    assert supernet[slot_key(2, 1, OpKind.GBe1)].shape == (8, 16, 3, 3)
    assert supernet[slot_key(3, 0, OpKind.GBe1)].shape == (12, 16, 3, 3)
    assert supernet[slot_key(3, 2, OpKind.GBe6)].shape == (12, 12, 3, 3)
    with pytest.raises(ValueError):
        supernet[STEM_KEY][0, 0, 0, 0] = 1.0
    again = SupernetWeights.build(small_space, seed=11)
    assert all(np.array_equal(again[k], supernet[k]) for k in supernet.keys())


def test_container_roundtrip(tmp_path, small_space, supernet):
    path = tmp_path / "s.bin"
    supernet.save(path)
    assert path.read_bytes()[:8] == MAGIC
    loaded = SupernetWeights.load(path)
    assert loaded.space_hash == supernet.space_hash and loaded.seed == 11
    for k in supernet.keys():
        assert loaded[k].dtype == np.dtype("<f4")
        assert loaded[k].tobytes() == supernet[k].tobytes()
    assert container_data_size(path) == sum(supernet[k].nbytes for k in supernet.keys())


def test_container_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTMAGIC" + b"\0" * 16)
    with pytest.raises(ContainerError):
        read_container(bad)
    short = tmp_path / "short.bin"
    write_container(short, {"a": np.ones((2, 2, 1, 1), np.float32)}, {"kind": "x"})
    short.write_bytes(short.read_bytes()[:-4])
    with pytest.raises(ContainerError, match="past end"):
        read_container(short)
    with pytest.raises(ContainerError):
        SupernetWeights.load(short)


def _check_mapping(supernet, space, genome):
    mapped = map_individual(supernet, space, genome)
    arch = decode(space, genome)
    layers = mapped.layers[1:]
    assert mapped.layers[0].source == STEM_KEY
    assert len(layers) == len(list(arch.layers()))
    prev = mapped.layers[0].out_indices
    flat = [(s, l) for s, l in arch.layers()]
    slot_of = {}
    for (stage, desc), layer in zip(flat, layers):
        slot = slot_of.get(stage, 0)
        slot_of[stage] = slot + 1
        assert layer.source == slot_key(stage, slot, desc.op)
        full = supernet[layer.source]
        assert layer.weights.shape == (desc.c_out, desc.c_in, 3, 3)
        assert list(layer.out_indices) == oracle_topk(l1_channel_norms(full), desc.c_out)
        assert layer.in_indices == prev
        for a, o in enumerate(layer.out_indices):
            for b, i in enumerate(layer.in_indices):
                assert np.array_equal(layer.weights[a, b], full[o, i])
        prev = layer.out_indices
    return mapped


def test_mapping_wiring_random(small_space, supernet, rng):
    for _ in range(20):
        _check_mapping(supernet, small_space, random_genome(small_space, rng))


def test_full_width_full_depth_is_whole_supernet(toy_space):
    supernet = SupernetWeights.build(toy_space, seed=2)
    full = Genome(
        tuple((OpKind.GBe4,) * s.max_slots for s in toy_space.searched),
        tuple(len(s.allowed_channels) - 1 for s in toy_space.searched),
    )
    mapped = map_individual(supernet, toy_space, full)
    for layer in mapped.layers:
        if layer.stage == 2 and layer.slot == 0:
            # pass-through slot emits the 16 stem channels
            assert layer.weights.shape[:2] == (16, 16)
        elif layer.stage == 2 and layer.slot == 1:
            assert layer.weights.shape[:2] == (32, 16)
        else:
            assert np.array_equal(layer.weights, supernet[layer.source])


def test_nesting(small_space, supernet):
    """A narrower choice selects a subset of the wider choice's channels."""
    wide = Genome(
        tuple((OpKind.GBe3,) * s.max_slots for s in small_space.searched),
        tuple(len(s.allowed_channels) - 1 for s in small_space.searched),
    )
    narrow = Genome(wide.op_genes, (0,) * 5)
    mw = map_individual(supernet, small_space, wide)
    mn = map_individual(supernet, small_space, narrow)
    for a, b in zip(mn.layers, mw.layers):
        assert set(a.out_indices) <= set(b.out_indices)


def test_unselected_perturbation_invisible(small_space, supernet, rng):
    g = random_genome(small_space, rng)
    base = map_individual(supernet, small_space, g)
    layer = next(l for l in base.layers[1:] if len(l.out_indices) < supernet[l.source].shape[0])
    full = np.array(supernet[layer.source])
    drop = [i for i in range(full.shape[0]) if i not in layer.out_indices]
    full[drop] *= -0.5
    perturbed = supernet.with_tensor(layer.source, full)
    again = map_individual(perturbed, small_space, g)
    for a, b in zip(base.layers, again.layers):
        assert a.weights.tobytes() == b.weights.tobytes() and a.out_indices == b.out_indices


def test_selected_perturbation_visible(small_space, supernet, rng):
    g = random_genome(small_space, rng)
    base = map_individual(supernet, small_space, g)
    layer = base.layers[1]
    full = np.array(supernet[layer.source])
    full[layer.out_indices[0], layer.in_indices[0], 0, 0] += 0.25
    again = map_individual(supernet.with_tensor(layer.source, full), small_space, g)
    assert again.layers[1].weights.tobytes() != layer.weights.tobytes()


def test_space_mismatch(small_space, space):
    sn = SupernetWeights.build(small_space)
    with pytest.raises(MappingError):
        map_individual(sn, space, random_genome(space, np.random.default_rng(0)))


def test_ref_arch_mapped_dims(space, ref_arch_text):
    arch = parse_architecture(ref_arch_text, space)
    genome = encode(space, arch)
    sn = SupernetWeights.build(space, seed=0)
    mapped = map_individual(sn, space, genome)
    expected = [(16, 3, 3, 3)] + [(l.c_out, l.c_in, 3, 3) for _, l in arch.layers()]
    assert [l.weights.shape for l in mapped.layers] == expected
    assert len(mapped.layers) == 34


def test_mapped_save_sidecar(tmp_path, small_space, supernet, rng):
    g = random_genome(small_space, rng)
    mapped = map_individual(supernet, small_space, g)
    sidecar = mapped.save(tmp_path / "m.bin")
    assert sidecar.name == "m.bin.json"
    header, tensors = read_container(tmp_path / "m.bin")
    assert header["kind"] == "mapped"
    assert [t.shape for t in tensors.values()] == [l.weights.shape for l in mapped.layers]
