"""Pretrain the LUT-graph teacher on a synthetic corpus, then check the KD pull.

    python3 scripts/teacher_learnability.py --work /tmp/learn

Prints the teacher's test metrics, then trains an alpha = 0 student and
reports the epoch at which its mean KD loss first falls below 5% of the
epoch-0 value.
"""

import argparse
import json
import time
from pathlib import Path

from qorkd.evalx import evaluate
from qorkd.models import save_checkpoint
from qorkd.synthgen import SynthSpec, generate
from qorkd.training import TrainConfig, load_corpus, pretrain_teacher, train_student_kd


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--work", default="learn_work")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--teacher-epochs", type=int, default=300)
    ap.add_argument("--student-epochs", type=int, default=500)
    args = ap.parse_args()
    work = Path(args.work)
    spec = SynthSpec(n_designs=1000, min_nodes=4, max_nodes=64, noise_sigma=0.05,
                     train_frac=0.8, val_frac=0.1, seed=args.seed)
    generate(spec, work / "data")
    corpus = load_corpus(work / "data", need=("lut", "embedding"))

    t0 = time.time()
    cfg = TrainConfig(optimizer="momentum", lr=1e-3, batch_size=64, max_epochs=args.teacher_epochs,
                      scheduler="plateau", seed=args.seed, log_path=str(work / "teacher.jsonl"))
    res = pretrain_teacher(corpus, cfg)
    save_checkpoint(work / "teacher.qdck", res.checkpoint)
    rep, _ = evaluate(res.checkpoint, corpus, "test")
    print(json.dumps({"teacher_test": json.loads(rep.to_json()), "best_epoch": res.best_epoch,
                      "seconds": round(time.time() - t0)}), flush=True)

    t0 = time.time()
    before = res.checkpoint.model.digest()
    log = work / "student_alpha0.jsonl"
    cfg = TrainConfig(optimizer="adam", lr=1e-3, batch_size=64, max_epochs=args.student_epochs,
                      seed=args.seed, alpha_schedule=((0, 0.0),), log_path=str(log))
    train_student_kd(corpus, res.checkpoint, cfg)
    kd = [json.loads(line)["train_kd"] for line in log.read_text().splitlines()]
    hit = next((e for e, v in enumerate(kd) if v < 0.05 * kd[0]), None)
    print(json.dumps({"kd_epoch0": kd[0], "first_below_5pct": hit, "min_ratio": min(kd) / kd[0],
                      "teacher_unchanged": res.checkpoint.model.digest() == before,
                      "seconds": round(time.time() - t0)}))


if __name__ == "__main__":
    main()
