import argparse
import json
import logging
import time
from pathlib import Path

RESULTS = Path(__file__).resolve().parent.parent / "results"


def parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=int, help="number of seeds (0..seeds-1)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path)
    return p


def dump(doc, out, default_name):
    out = out or RESULTS / default_name
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {out}")


def timed(fn, *args, **kw):
    logging.basicConfig(level=logging.WARNING)
    t0 = time.perf_counter()
    doc = fn(*args, **kw)
    doc["elapsed_seconds"] = time.perf_counter() - t0
    return doc
