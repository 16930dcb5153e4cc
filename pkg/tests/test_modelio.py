"""Durable format tests: model files, packed weights, CIFAR-10 batches."""

import numpy as np
import pytest

from snnaccel.errors import BadLabel, CorruptFile
from snnaccel.model import NetworkConfig
from snnaccel.modelio import (
    Cifar10Set,
    MAGIC,
    load_cifar10,
    load_model,
    models_equal,
    pack_weights,
    parse_cifar10,
    save_model,
    unpack_weights,
    write_cifar10,
)
from snnaccel.prepare import fuse_network, make_random_model, random_float_network
from snnaccel.sim import PeArrayGeometry, default_geometries
from test_engine import random_layer


class TestModelRoundTrip:
    def test_quantized_round_trip(self, small_model):
        data = save_model(small_model)
        loaded = load_model(data)
        assert models_equal(small_model, loaded)
        # serialization itself is deterministic
        assert save_model(loaded) == data

    def test_float_round_trip_with_bn(self, small_config):
        net = random_float_network(small_config, seed=11)
        assert not net.fused
        loaded = load_model(save_model(net))
        assert models_equal(net, loaded)
        assert not loaded.fused

    def test_float_round_trip_fused(self, small_config):
        net = fuse_network(random_float_network(small_config, seed=11))
        loaded = load_model(save_model(net))
        assert loaded.fused
        assert models_equal(net, loaded)

    def test_loaded_model_infers_identically(self, small_model, rng):
        from snnaccel.engine import infer

        loaded = load_model(save_model(small_model))
        img = rng.random((3, 8, 8))
        a, b = infer(img, small_model), infer(img, loaded)
        assert a.label == b.label and np.array_equal(a.scores, b.scores)

    def test_truncated_file(self, small_model):
        data = save_model(small_model)
        with pytest.raises(CorruptFile):
            load_model(data[: len(data) // 2])
        with pytest.raises(CorruptFile):
            load_model(data[:10])

    def test_wrong_magic(self, small_model):
        data = save_model(small_model)
        with pytest.raises(CorruptFile):
            load_model(b"WRONGMAG" + data[8:])

    def test_unknown_version(self, small_model):
        data = bytearray(save_model(small_model))
        data[8] = 99
        with pytest.raises(CorruptFile):
            load_model(bytes(data))

    def test_garbled_manifest(self, small_model):
        data = bytearray(save_model(small_model))
        data[20] = 0xFF  # stomp inside the JSON
        with pytest.raises(CorruptFile):
            load_model(bytes(data))

    def test_magic_is_eight_bytes(self):
        assert len(MAGIC) == 8


class TestPackedWeights:
    def test_single_tile_contiguous(self, rng):
        layer = random_layer(rng, 8, 8, 1, 3, 1, 1)
        geom = PeArrayGeometry(8, 8, 9, False)
        packed = pack_weights(layer, geom)
        assert packed.data == layer.weights.values.astype(np.int8).tobytes()

    def test_main_path_64_segments(self, rng):
        layer = random_layer(rng, 128, 128, 4, 3, 1, 1)
        from snnaccel.sim import tile_layer

        geom = PeArrayGeometry(8, 8, 9, False)
        assert tile_layer(layer, geom).invocations == 64
        packed = pack_weights(layer, geom)
        assert len(packed.data) == layer.weight_count

    @pytest.mark.parametrize("c_in,c_out,groups,kernel,rows,cols", [
        (8, 8, 1, 3, 8, 8), (16, 16, 4, 3, 3, 5), (12, 6, 2, 1, 4, 4),
        (128, 128, 4, 3, 8, 8), (3, 16, 1, 3, 3, 64),
    ])
    def test_pack_unpack_identity(self, rng, c_in, c_out, groups, kernel, rows, cols):
        layer = random_layer(rng, c_in, c_out, groups, kernel, 1, kernel // 2)
        geom = PeArrayGeometry(rows, cols, kernel * kernel, False)
        packed = pack_weights(layer, geom)
        assert len(packed.data) == layer.weight_count  # one byte per weight
        restored = unpack_weights(packed, layer)
        assert np.array_equal(restored.values, layer.weights.values)

    def test_model_wide_identity(self, small_model):
        geoms = default_geometries(small_model)
        for layer in small_model.conv_layers():
            packed = pack_weights(layer, geoms[layer.name])
            assert np.array_equal(unpack_weights(packed, layer).values,
                                  layer.weights.values)


class TestCifar10:
    def test_minimal_record(self, tmp_path):
        record = bytes([9]) + bytes(range(256)) * 12
        assert len(record) == 3073
        path = tmp_path / "one.bin"
        path.write_bytes(record)
        ds = load_cifar10(path)
        assert len(ds) == 1
        assert ds.labels[0] == 9
        assert ds.images.shape == (1, 3, 32, 32)

    def test_batch_round_trip(self, tmp_path, rng):
        ds = Cifar10Set(
            labels=rng.integers(0, 10, 50).astype(np.uint8),
            images=rng.integers(0, 256, (50, 3, 32, 32)).astype(np.uint8),
        )
        path = tmp_path / "batch.bin"
        write_cifar10(ds, path)
        assert path.stat().st_size == 50 * 3073
        loaded = load_cifar10(path)
        assert np.array_equal(loaded.labels, ds.labels)
        assert np.array_equal(loaded.images, ds.images)

    def test_channel_planar_layout(self, tmp_path):
        # red plane first, then green, then blue
        pixels = bytes([1] * 1024 + [2] * 1024 + [3] * 1024)
        path = tmp_path / "rgb.bin"
        path.write_bytes(bytes([0]) + pixels)
        ds = load_cifar10(path)
        assert np.all(ds.images[0, 0] == 1)
        assert np.all(ds.images[0, 1] == 2)
        assert np.all(ds.images[0, 2] == 3)

    def test_wrong_length_rejected(self):
        with pytest.raises(CorruptFile):
            parse_cifar10(b"\x00" * 3072)
        with pytest.raises(CorruptFile):
            parse_cifar10(b"\x00" * (3073 + 1))
        with pytest.raises(CorruptFile):
            parse_cifar10(b"")

    def test_bad_label_rejected(self):
        with pytest.raises(BadLabel):
            parse_cifar10(bytes([10]) + bytes(3072))

    def test_all_labels_in_range(self, tmp_path, rng):
        ds = Cifar10Set(
            labels=rng.integers(0, 10, 100).astype(np.uint8),
            images=rng.integers(0, 256, (100, 3, 32, 32)).astype(np.uint8),
        )
        path = tmp_path / "b.bin"
        write_cifar10(ds, path)
        loaded = load_cifar10(path)
        assert loaded.labels.min() >= 0 and loaded.labels.max() <= 9
