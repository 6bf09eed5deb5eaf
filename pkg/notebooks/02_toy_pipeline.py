"""
End-to-end toy pipeline
=======================

Corpus -> short three-stage training -> enhancement -> evaluation, driven
through the same entry point as the command line. The schedule is scaled down
to a few dozen steps so this finishes in a couple of minutes on one core; the
resulting model is not expected to beat the unprocessed input.
"""

import json
import tempfile
from pathlib import Path

from wavenhance.cli import main as wavenhance

work = Path(tempfile.mkdtemp())
config = Path(__file__).resolve().parents[1] / "configs" / "toy.yaml"

#%%
# 1. A 20-utterance corpus with its own rooms and noises.
wavenhance(["make-toy-dataset", "--seed", "3", "--n-utterances", "20", "--out", str(work / "toy")])
manifest = work / "toy" / "manifest.jsonl"

#%%
# 2. Train with every stage scaled by 1e-4 (spectral, spectral+postnet, adversarial).
#    Interrupt after 30 steps, then resume: the log continues as if never stopped.
train = ["train", "--config", str(config), "--manifest", str(manifest),
         "--stage-scale", "0.0001", "--out", str(work / "run")]
wavenhance(train + ["--stop-after", "30"])
wavenhance(train + ["--resume"])
log = [json.loads(line) for line in open(work / "run" / "train_log.jsonl")]
print(f"{len(log)} steps, stages {sorted({r['stage'] for r in log})}, "
      f"final spectral loss {log[-1]['spec_post']:.3f}")

#%%
# 3. Enhance one held-out file and score the test split against the identity baseline.
wavenhance(["simulate", "--config", str(config), "--manifest", str(manifest), "--split", "test",
            "--out", str(work / "pairs")])
first = json.loads(open(work / "pairs" / "pairs.jsonl").readline())
wavenhance(["enhance", str(work / "run" / "final"), str(work / "pairs" / first["degraded"]),
            str(work / "enhanced.wav"), "--config", str(config)])

for model in ("identity", str(work / "run" / "final")):
    out = work / ("eval_" + Path(model).name)
    wavenhance(["evaluate", model, "--pairs", str(work / "pairs" / "pairs.jsonl"),
                "--config", str(config), "--out", str(out)])
    summary = json.load(open(out / "summary.json"))
    print(Path(model).name, {k: round(v["mean"], 3) for k, v in summary.items()})

#%%
# 4. Training curves.
wavenhance(["plot", "--log", str(work / "run" / "train_log.jsonl"), "--out", str(work / "plots")])
print(sorted(p.name for p in (work / "plots").iterdir()))
