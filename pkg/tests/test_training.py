import json

import numpy as np
import pytest

from conftest import tiny_config
from forgeloc.network import Network, batch_losses, infer
from forgeloc.numcore import Tape
from forgeloc.training import (
    CheckpointFormatError, Trainer, TrainingDiverged, checkpoint_name, load_checkpoint,
    network_from_checkpoint, save_checkpoint, train,
)


def test_checkpoint_round_trip_is_bitwise(tmp_path, tiny_corpus):
    trainer = Trainer(tiny_config(epochs=1), 4, 3)
    trainer.fit(tiny_corpus)
    a = tmp_path / "a.ckpt"
    save_checkpoint(a, trainer.state())
    back = load_checkpoint(a)
    assert set(back) == set(trainer.state())
    for k, v in trainer.state().items():
        np.testing.assert_array_equal(back[k], v)
    b = tmp_path / "b.ckpt"
    save_checkpoint(b, back)
    assert a.read_bytes() == b.read_bytes()


def test_corrupt_checkpoints_are_rejected(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {"w": np.ones((2, 3), dtype=np.float32)})
    raw = path.read_bytes()
    path.write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)
    path.write_bytes(raw[:-2])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)
    path.write_bytes(raw + b"\0")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_identical_seeds_identical_logs(tiny_corpus):
    logs = [[e.to_json() for e in Trainer(tiny_config(), 4, 3).fit(tiny_corpus).logs] for _ in range(2)]
    assert logs[0] == logs[1]
    other = [e.to_json() for e in Trainer(tiny_config(seed=4), 4, 3).fit(tiny_corpus).logs]
    assert other != logs[0]


def test_resume_matches_uninterrupted_run(tmp_path, tiny_corpus):
    cfg = tiny_config(epochs=3)
    full = train(tiny_corpus, cfg, tmp_path / "full")
    train(tiny_corpus, cfg.override(epochs=1), tmp_path / "part")
    resumed = train(tiny_corpus, cfg, tmp_path / "part", resume=tmp_path / "part" / checkpoint_name(1))
    assert [e.to_json() for e in resumed.logs] == [e.to_json() for e in full.logs[1:]]
    a = load_checkpoint(tmp_path / "full" / checkpoint_name(3))
    b = load_checkpoint(tmp_path / "part" / checkpoint_name(3))
    assert set(a) == set(b)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    lines = (tmp_path / "full" / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert set(json.loads(lines[0])) == {"epoch", "L_CLS", "L_recon", "L_KL", "L_AICL", "L_total"}


def test_training_never_reads_intervals(tiny_corpus):
    cfg = tiny_config(epochs=1)
    a = Trainer(cfg, 4, 3).fit(tiny_corpus).logs
    shifted = [ep.__class__(ep.id, ep.visual, ep.audio, ep.label, None) for ep in tiny_corpus]
    b = Trainer(cfg, 4, 3).fit(shifted).logs
    assert [e.to_json() for e in a] == [e.to_json() for e in b]


def test_channel_mismatch_is_rejected(tiny_corpus):
    with pytest.raises(ValueError):
        Trainer(tiny_config(), 5, 3).fit(tiny_corpus)


def test_divergence_keeps_last_checkpoint(tmp_path, tiny_corpus):
    trainer = Trainer(tiny_config(epochs=2), 4, 3)
    trainer.fit(tiny_corpus[:6], tmp_path)
    trainer.config = trainer.config.override(epochs=3)
    trainer.network.store["heads/H1/W"].data[:] = np.float32(3e38)
    with pytest.raises(TrainingDiverged) as info:
        trainer.fit(tiny_corpus[:6], tmp_path)
    assert info.value.last_checkpoint == tmp_path / checkpoint_name(2)
    assert info.value.last_checkpoint.exists()


def test_single_batch_smoke(tiny_corpus):
    net = Network(tiny_config(), 4, 3)
    with Tape():
        res = batch_losses(net, tiny_corpus[:4], np.random.default_rng(0), np.random.default_rng(1))
    assert all(np.isfinite(float(v.data)) for v in res.components.values())


def test_ragged_batches_are_grouped(tiny_corpus):
    lengths = {ep.T for ep in tiny_corpus}
    assert len(lengths) > 1
    net = Network(tiny_config(), 4, 3)
    with Tape():
        res = batch_losses(net, tiny_corpus, np.random.default_rng(0), np.random.default_rng(1))
    assert sorted(res.order) == list(range(len(tiny_corpus)))
    assert len(res.passes) == len(lengths)


def test_inference_ignores_batch_composition(tiny_corpus):
    net = Network(tiny_config(), 4, 3)
    whole = infer(net, tiny_corpus)
    alone = infer(net, tiny_corpus[3:4])[0]
    np.testing.assert_allclose(whole[3].recon_err["visual"], alone.recon_err["visual"], rtol=1e-5, atol=1e-6)
    threaded = infer(net, tiny_corpus, workers=3)
    for a, b in zip(whole, threaded):
        np.testing.assert_array_equal(a.h1_video, b.h1_video)


def test_checkpoint_restores_network(tmp_path, tiny_corpus):
    trainer = Trainer(tiny_config(epochs=1), 4, 3)
    trainer.fit(tiny_corpus)
    save_checkpoint(tmp_path / "m.ckpt", trainer.state())
    net = network_from_checkpoint(load_checkpoint(tmp_path / "m.ckpt"), trainer.config)
    a = infer(trainer.network, tiny_corpus[:3])
    b = infer(net, tiny_corpus[:3])
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.h1_video, y.h1_video)
