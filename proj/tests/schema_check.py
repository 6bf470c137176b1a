#!/usr/bin/env python3
"""Runs every CLI command on a tiny synthetic task and validates the JSON it
writes against the schemas in schemas/. Also validates the shipped configs.

Usage: schema_check.py <qbf binary> <source dir> <scratch dir>
"""
import json
import pathlib
import shutil
import subprocess
import sys

import jsonschema
from referencing import Registry, Resource

qbf, src, scratch = (pathlib.Path(a) for a in sys.argv[1:4])
schemas = {p.name: json.loads(p.read_text()) for p in (src / "schemas").glob("*.schema.json")}
registry = Registry().with_resources((name, Resource.from_contents(doc)) for name, doc in schemas.items())
failures = []


def check(doc, schema_name, label):
    validator = jsonschema.Draft202012Validator(schemas[schema_name], registry=registry)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
    for e in errors:
        failures.append(f"{label}: {'/'.join(map(str, e.path))}: {e.message}")
    print(f"{'ok  ' if not errors else 'FAIL'} {label} against {schema_name}")


def run(*args):
    proc = subprocess.run([str(qbf), *args], capture_output=True, text=True)
    if proc.returncode != 0:
        failures.append(f"qbf {' '.join(args)} exited {proc.returncode}: {proc.stderr.strip()}")
        return None
    return json.loads(proc.stdout)


for cfg in sorted((src / "configs").glob("*.json")):
    check(json.loads(cfg.read_text()), "config.schema.json", f"configs/{cfg.name}")

shutil.rmtree(scratch, ignore_errors=True)
scratch.mkdir(parents=True)
config = {
    "dataset": {"kind": "synthetic", "num_classes": 3, "dim": 6, "per_class": 30, "spread": 0.15, "seed": 1},
    "arch": {"kind": "mlp", "layers": [6, 8, 3]},
    "quantizer": "uniform:8:clip=0.9",
    "eval_quantizers": ["uniform:8:clip=0.9", "dorefa:4", "ternary"],
    "train": {"lr": 0.001, "batch_size": 16, "max_iters": 40, "eval_every": 10, "seed": 3},
    "output_dir": str(scratch / "bd"),
}
check(config, "config.schema.json", "inline config")
cfg_path = scratch / "config.json"
cfg_path.write_text(json.dumps(config))
c = ["--config", str(cfg_path)]

outputs = {
    "train-backdoor": (run("train-backdoor", *c), "summary.schema.json"),
    "train-vanilla": (run("train-vanilla", *c, "--out", str(scratch / "van")), "summary.schema.json"),
    "train-backdoor --sweep-lambda": (
        run("train-backdoor", *c, "--out", str(scratch / "sweep"), "--sweep-lambda", "0.5,1,1.5"),
        "sweep.schema.json",
    ),
    "eval": (run("eval", *c, "--out", str(scratch / "eval"), "--checkpoint", str(scratch / "bd/checkpoint.qbf")),
             "eval.schema.json"),
    "scan": (run("scan", *c, "--out", str(scratch / "scan"), "--checkpoint", str(scratch / "bd/checkpoint.qbf")),
             "scan.schema.json"),
}
outputs["cross-eval"] = (
    run("cross-eval", *c, "--out", str(scratch / "x"), "--checkpoint", str(scratch / "bd/checkpoint.qbf"),
        "--checkpoint", str(scratch / "van/checkpoint.qbf"), "--spec", "uniform:8:clip=0.9", "--spec", "ternary"),
    "matrix.schema.json",
)
for label, (doc, schema) in outputs.items():
    if doc is not None:
        check(doc, schema, f"stdout of {label}")

files = {
    "bd/summary.json": "summary.schema.json",
    "bd/history.json": "history.schema.json",
    "van/summary.json": "summary.schema.json",
    "sweep/sweep.json": "sweep.schema.json",
    "sweep/lambda_0.5/summary.json": "summary.schema.json",
    "eval/eval.json": "eval.schema.json",
    "scan/scan.json": "scan.schema.json",
    "x/matrix.json": "matrix.schema.json",
}
for rel, schema in files.items():
    path = scratch / rel
    if not path.exists():
        failures.append(f"missing output {rel}")
        continue
    check(json.loads(path.read_text()), schema, rel)

headers = {
    "bd/history.csv": "iter,l_ben,l_qba,l_overall,plain_val_acc,quantized_target_rate,lr",
    "sweep/sweep.csv": "lambda,acc,acc_t,asr,asr_normalized",
    "scan/scan.csv": "quantizer,divergence,alert",
    "x/matrix.csv": "train_quantizer,uniform:8:clip=0.9:acc_t,uniform:8:clip=0.9:asr,ternary:acc_t,ternary:asr",
}
for rel, header in headers.items():
    path = scratch / rel
    first = path.read_text().split("\n", 1)[0] if path.exists() else "<missing>"
    if first != header:
        failures.append(f"{rel}: header {first!r}, expected {header!r}")

# A document with a misspelt key must be rejected; guards against a schema that accepts anything.
before = len(failures)
check({**config, "train": {"learning_rate": 0.1}}, "config.schema.json", "misspelt config (expected to fail)")
if len(failures) == before:
    failures.append("config schema accepted an unknown train key")
else:
    del failures[before:]

shutil.rmtree(scratch, ignore_errors=True)
for f in failures:
    print("error:", f)
sys.exit(1 if failures else 0)
