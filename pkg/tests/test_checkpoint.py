import numpy as np
import pytest
import torch
import torch.nn as nn

from lesionsynth.checkpoint import (MAGIC, Checkpoint, checkpoint_name, from_bytes, latest_checkpoint,
                                    load_checkpoint, load_module_arrays, load_optimizer_arrays, module_arrays,
                                    optimizer_arrays, save_checkpoint, to_bytes)
from lesionsynth.errors import InvalidArgumentError


@pytest.fixture
def sample_checkpoint():
    rng = np.random.default_rng(1)
    return Checkpoint(
        kind="pix2pixhd",
        epoch=7,
        fingerprint="ab" * 32,
        config={"training": {"epochs": 10, "seed": 0}},
        tensors={"generator.w": rng.standard_normal((3, 4)).astype(np.float32),
                 "generator.steps": np.array(5, dtype=np.int64)},
        meta={"global_step": 42},
    )


def test_save_load_save_is_byte_identical(tmp_path, sample_checkpoint):
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"
    save_checkpoint(sample_checkpoint, first)
    save_checkpoint(load_checkpoint(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_header_starts_with_magic(sample_checkpoint):
    payload = to_bytes(sample_checkpoint)
    assert payload[:8] == MAGIC
    header_len = int.from_bytes(payload[8:12], "little")
    assert payload[12:12 + header_len].startswith(b"{")


def test_loaded_tensors_keep_shape_and_dtype(sample_checkpoint):
    loaded = from_bytes(to_bytes(sample_checkpoint))

    assert loaded.epoch == 7
    assert loaded.meta == {"global_step": 42}
    assert loaded.tensors["generator.steps"].dtype == np.int64
    assert int(loaded.tensors["generator.steps"]) == 5
    np.testing.assert_array_equal(loaded.tensors["generator.w"], sample_checkpoint.tensors["generator.w"])


def test_large_integer_tensors_survive_exactly():
    step = 2 ** 24 + 1
    ckpt = Checkpoint(kind="pix2pixhd", epoch=0, fingerprint="0" * 64, config={},
                      tensors={"opt_g.state.0.step": np.array(step, dtype=np.int64),
                               "generator.w": np.ones(2, dtype=np.float32)})

    loaded = from_bytes(to_bytes(ckpt))

    assert int(loaded.tensors["opt_g.state.0.step"]) == step
    assert loaded.tensors["generator.w"].dtype == np.float32


def test_bad_magic_is_rejected():
    with pytest.raises(InvalidArgumentError):
        from_bytes(b"NOTACKPT" + b"\x00" * 8)


def test_latest_checkpoint_picks_highest_epoch(tmp_path, sample_checkpoint):
    assert latest_checkpoint(tmp_path) is None
    for epoch in (9, 10, 2):
        save_checkpoint(sample_checkpoint, tmp_path / checkpoint_name(epoch))
    assert latest_checkpoint(tmp_path).endswith("epoch_0010.ckpt")


def test_module_and_optimizer_state_restore():
    torch.manual_seed(0)
    source = nn.Linear(3, 2)
    optimizer = torch.optim.Adam(source.parameters(), lr=0.01)
    source(torch.randn(4, 3)).sum().backward()
    optimizer.step()

    tensors = module_arrays("net", source)
    opt_tensors, opt_meta = optimizer_arrays("opt", optimizer)
    loaded = from_bytes(to_bytes(Checkpoint("x", 0, "", {}, {**tensors, **opt_tensors}, {"opt": opt_meta})))

    target = nn.Linear(3, 2)
    target_opt = torch.optim.Adam(target.parameters(), lr=0.5)
    load_module_arrays("net", target, loaded.tensors)
    load_optimizer_arrays("opt", target_opt, loaded.tensors, loaded.meta["opt"])

    assert torch.equal(target.weight, source.weight)
    assert target_opt.param_groups[0]["lr"] == 0.01
    exp_avg = target_opt.state_dict()["state"][0]["exp_avg"]
    assert torch.equal(exp_avg, optimizer.state_dict()["state"][0]["exp_avg"])


def test_missing_tensor_is_reported():
    with pytest.raises(InvalidArgumentError):
        load_module_arrays("net", nn.Linear(2, 2), {})
