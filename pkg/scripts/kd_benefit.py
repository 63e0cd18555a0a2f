"""Default alpha schedule vs alpha = 1 on corpora with noisy label coordinates.

    python3 scripts/kd_benefit.py --seeds 0,1,2 --work /tmp/kd_benefit

For each seed: generate a corpus, pretrain the LUT-graph teacher, then train
two embedding students that differ only in the alpha schedule.  Prints one
JSON line per seed and a closing line with the medians.
"""

import argparse
import json
import statistics
import time
from pathlib import Path

import numpy as np

from qorkd.evalx import evaluate
from qorkd.models import load_checkpoint, save_checkpoint
from qorkd.synthgen import SynthSpec, generate
from qorkd.training import DEFAULT_ALPHA_SCHEDULE, TrainConfig, load_corpus, pretrain_teacher, train_student_kd


def corpus_spec(seed: int, args) -> SynthSpec:
    return SynthSpec(n_designs=args.n_designs, min_nodes=4, max_nodes=64, noise_sigma=args.noise_sigma,
                     embed_noise=args.embed_noise, embed_dim=args.embed_dim, train_frac=0.8, val_frac=0.1,
                     seed=seed)


def teacher_for(seed: int, corpus, work: Path, epochs: int, key: str):
    """Teachers only see graphs and labels, which do not depend on the embedding settings, so they are cached."""
    path = work / f"teacher_s{seed}_{key}_e{epochs}.qdck"
    if path.exists():
        return load_checkpoint(path)
    cfg = TrainConfig(optimizer="momentum", lr=1e-3, batch_size=64, max_epochs=epochs,
                      scheduler="plateau", seed=seed)
    ckpt = pretrain_teacher(corpus, cfg).checkpoint
    save_checkpoint(path, ckpt)
    return ckpt


def student_cfg(seed: int, schedule, epochs: int, optimizer: str, lr: float) -> TrainConfig:
    return TrainConfig(optimizer=optimizer, lr=lr, batch_size=64, max_epochs=epochs, seed=seed,
                       alpha_schedule=schedule)


def run_seed(seed, args):
    work = Path(args.work)
    key = f"n{args.n_designs}_ns{args.noise_sigma}"
    data = work / f"corpus_s{seed}_{key}_en{args.embed_noise}_d{args.embed_dim}"
    if not (data / "split.json").exists():
        generate(corpus_spec(seed, args), data)
    corpus = load_corpus(data, need=("lut", "embedding"))
    teacher = teacher_for(seed, corpus, work, args.teacher_epochs, key)
    out = {"seed": seed}
    for name, sched in (("kd", DEFAULT_ALPHA_SCHEDULE), ("sl", ((0, 1.0),))):
        res = train_student_kd(corpus, teacher, student_cfg(seed, sched, args.epochs, args.optimizer, args.lr))
        rep, _ = evaluate(res.checkpoint, corpus, "test")
        out[name] = {"mae": rep.mae, "r2": rep.r2, "best_epoch": res.best_epoch}
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--work", default="kd_benefit_work")
    ap.add_argument("--embed-noise", type=float, default=0.5)
    ap.add_argument("--embed-dim", type=int, default=32)
    ap.add_argument("--n-designs", type=int, default=1000)
    ap.add_argument("--noise-sigma", type=float, default=0.05)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--teacher-epochs", type=int, default=300)
    ap.add_argument("--optimizer", default="adam")
    ap.add_argument("--lr", type=float, default=1e-3)
    args = ap.parse_args()
    Path(args.work).mkdir(parents=True, exist_ok=True)
    rows = []
    for s in (int(x) for x in args.seeds.split(",")):
        t0 = time.time()
        rows.append(run_seed(s, args))
        print(json.dumps({**rows[-1], "seconds": round(time.time() - t0)}), flush=True)
    kd = statistics.median(r["kd"]["mae"] for r in rows)
    sl = statistics.median(r["sl"]["mae"] for r in rows)
    print(json.dumps({"median_mae_kd": kd, "median_mae_sl": sl, "kd_better": bool(kd < sl),
                      "per_seed_wins": int(np.sum([r["kd"]["mae"] < r["sl"]["mae"] for r in rows]))}))


if __name__ == "__main__":
    main()
