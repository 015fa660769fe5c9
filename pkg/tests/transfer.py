"""Scaled synthetic transfer experiment shared by the acceptance suite.

Pre-train on isolated synthetic notes (8 families x 8 instruments), then fine-tune
on 1-3 note polyphonic mixtures built from disjoint source notes, and score a
held-out mixture set. Runnable on its own: ``python tests/transfer.py OUT_DIR``.
"""

from __future__ import annotations

import json
import logging
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import torch

from timbre.corpus.manifest import Corpus
from timbre.corpus.synth import default_specs, make_polyphonic, synth_corpus
from timbre.evalkit.inference import score_entries
from timbre.evalkit.metrics import lrap, sweep_threshold
from timbre.model.checkpoint import model_from_checkpoint
from timbre.model.network import EncoderConfig, ModelConfig
from timbre.traincore import RunConfig, finetune, pretrain

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransferSetup:
    n_families: int = 8
    instruments_per_family: int = 8
    notes_per_instrument: int = 8
    note_s: float = 2.0
    n_train_mixtures: int = 400
    n_test_mixtures: int = 200
    pretrain_epochs: int = 10
    pretrain_batch: int = 16
    pretrain_lr: float = 0.002
    finetune_epochs: int = 15
    few_shot_epochs: int = 40
    few_shot_fraction: float = 0.1
    finetune_batch: int = 32
    pretrained_finetune_lr: float = 0.001
    seed: int = 0


def _model() -> ModelConfig:
    return ModelConfig(encoder=EncoderConfig(depths=(2, 2, 2, 2), shared_blocks=True))


def _score(result, test, root, names) -> dict:
    sm = score_entries(model_from_checkpoint(result.checkpoint), test, root, names)
    (t, rep), _ = sweep_threshold(sm)
    return {"micro_f1": rep.micro_f1, "threshold": t, "lrap": lrap(sm)}


def run_transfer(out_dir: str | Path, setup: TransferSetup = TransferSetup()) -> dict:
    """Run the full experiment and return scores plus wall-clock seconds."""
    torch.set_num_threads(1)
    out = Path(out_dir)
    start = time.perf_counter()
    specs = default_specs(setup.n_families, setup.instruments_per_family, seed=setup.seed)
    labels, notes = synth_corpus(specs, setup.notes_per_instrument, setup.note_s, setup.seed + 1, out,
                                 id_prefix="pre_")
    _, sources = synth_corpus(specs, setup.notes_per_instrument, setup.note_s, setup.seed + 2, out,
                              id_prefix="src_")
    # Training and test mixtures draw on disjoint halves of each instrument's notes.
    half = setup.notes_per_instrument // 2
    train_src = [e for e in sources if int(e.id.rsplit("_n", 1)[1]) < half]
    test_src = [e for e in sources if int(e.id.rsplit("_n", 1)[1]) >= half]
    train_mix = make_polyphonic(train_src, setup.n_train_mixtures, setup.seed + 3, out, root=out,
                                id_prefix="mtr")
    test_mix = [replace(e, split="test") for e in
                make_polyphonic(test_src, setup.n_test_mixtures, setup.seed + 4, out, root=out,
                                id_prefix="mte")]
    model = _model()
    pre = pretrain(RunConfig.for_phase("pretrain", epochs=setup.pretrain_epochs,
                                       batch_size=setup.pretrain_batch, max_lr=setup.pretrain_lr,
                                       warmup_epochs=1, model=model, seed=setup.seed),
                   Corpus(labels, notes, out))
    mixtures = Corpus(labels, train_mix + test_mix, out)
    names = labels.coarse_names

    def tune(init, fraction, epochs):
        lr = setup.pretrained_finetune_lr if init is not None else None
        cfg = RunConfig.for_phase("finetune", epochs=epochs, batch_size=setup.finetune_batch,
                                  warmup_epochs=2, model=model, data_fraction=fraction, max_lr=lr,
                                  seed=setup.seed)
        return _score(finetune(cfg, init, mixtures), test_mix, out, names)

    result = {
        "pretrain_losses": pre.epoch_losses,
        "full_pretrained": tune(pre.checkpoint, 1.0, setup.finetune_epochs),
        "few_pretrained": tune(pre.checkpoint, setup.few_shot_fraction, setup.few_shot_epochs),
        "few_random": tune(None, setup.few_shot_fraction, setup.few_shot_epochs),
    }
    result["few_gap"] = result["few_pretrained"]["micro_f1"] - result["few_random"]["micro_f1"]
    result["seconds"] = time.perf_counter() - start
    return result


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    print(json.dumps(run_transfer(sys.argv[1] if len(sys.argv) > 1 else "transfer_run"), indent=2))
