#!/usr/bin/env python3
"""Brute-force reference scorer for the hand-crafted prediction set.

Every mask is a list of lists of 0/1 filled pixel by pixel; nothing is shared
with the Rust engine. Writes the expected reports next to the predictions:

    python3 naive_report.py <fixtures-dir>
"""

import hashlib
import json
import re
import struct
import sys
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

CATEGORIES = [
    ("textures", "low"),
    ("edges_shapes", "low"),
    ("symbols", "low"),
    ("color", "low"),
    ("semantics", "high"),
    ("commonsense", "cognitive"),
    ("physics", "cognitive"),
]


def tool_version(root):
    text = (root / "core" / "Cargo.toml").read_text()
    return re.search(r'^version = "([^"]+)"', text, re.M).group(1)


def pct1(r):
    q = Decimal(r * 1000.0).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    return float(q) / 10.0


def content_hash(parts):
    h = hashlib.sha256()
    for label, data in parts:
        h.update(label.encode())
        h.update(b"\0")
        h.update(struct.pack("<Q", len(data)))
        h.update(data)
    return "sha256:" + h.hexdigest()


def blank(w, h):
    return [[0] * w for _ in range(h)]


def inside(poly, px, py):
    c = False
    j = len(poly) - 1
    for i in range(len(poly)):
        xi, yi = poly[i]
        xj, yj = poly[j]
        if (yi > py) != (yj > py) and px < (xj - xi) * (py - yi) / (yj - yi) + xi:
            c = not c
        j = i
    return c


def polygon_mask(poly, w, h):
    return [[int(inside(poly, c + 0.5, r + 0.5)) for c in range(w)] for r in range(h)]


def rle_mask(rle, w, h):
    assert rle["size"] == [h, w] and sum(rle["counts"]) == w * h
    flat = []
    for k, n in enumerate(rle["counts"]):
        flat += [k % 2] * n
    return [flat[r * w:(r + 1) * w] for r in range(h)]


def region_mask(reg, w, h):
    if reg["type"] == "mask":
        return rle_mask(reg, w, h)
    m = blank(w, h)
    if reg["type"] == "box":
        x0, y0, x1, y1 = reg["bbox"]
        for r in range(h):
            for c in range(w):
                if x0 <= c + 0.5 < x1 and y0 <= r + 0.5 < y1:
                    m[r][c] = 1
    else:
        x, y = reg["point"]
        m[int(y // 1)][int(x // 1)] = 1
    return m


def union(masks, w, h):
    out = blank(w, h)
    for m in masks:
        for r in range(h):
            for c in range(w):
                out[r][c] |= m[r][c]
    return out


def count(pred, gt):
    tp = fp = fn = 0
    for pr, gr in zip(pred, gt):
        for p, g in zip(pr, gr):
            tp += p and g
            fp += p and not g
            fn += g and not p
    return {"tp": tp, "fp": fp, "fn": fn}


def area(m):
    return sum(map(sum, m))


def load_manifest(path, tau):
    doc = json.loads(path.read_bytes())
    images = []
    for r in doc["images"]:
        anns = []
        for a in sorted(r.get("annotations", []), key=lambda a: a["round"]):
            s = a.get("confidence_scores")
            weight = sum(s) / len(s) if s else 1.0
            if weight >= tau:
                anns.append(a)
        images.append(dict(r, annotations=anns))
    return images


def find_fake(images, uid, gen):
    hits = [i for i, r in enumerate(images) if r["uid"] == uid and r["role"] == "fake" and r["generator"] == gen]
    assert len(hits) == 1, (uid, gen)
    return hits[0]


def config(**over):
    cfg = {
        "binarize_threshold": 0.5,
        "gate_on_aj": False,
        "instance_mode": "category_aware",
        "pooling": "micro",
        "strict": False,
        "t": 0.5,
        "tau": 0.0,
        "threshold": 0.5,
    }
    cfg.update(over)
    return cfg


def row(key, metrics, **extra):
    out = dict(extra, key=key, raw=dict(metrics))
    for k, v in metrics.items():
        out[k] = pct1(v)
    return out


def div(a, b, name, undefined):
    if b == 0:
        undefined.append(name)
        return 0.0
    return a / b


def pixel_metrics(c):
    und = []
    iou = div(c["tp"], c["tp"] + c["fp"] + c["fn"], "iou", und)
    p = div(c["tp"], c["tp"] + c["fp"], "pixp", und)
    r = div(c["tp"], c["tp"] + c["fn"], "pixr", und)
    if p + r == 0:
        und.append("pixf1")
        f1 = 0.0
    else:
        f1 = 2 * p * r / (p + r)
    return {"iou": iou, "pixp": p, "pixr": r, "pixf1": f1}, und


def pooled_row(key, level, per_image, pooling):
    live = [c for c in per_image if c["tp"] or c["fp"] or c["fn"]]
    total = {k: sum(c[k] for c in live) for k in ("tp", "fp", "fn")}
    if pooling == "micro" or not live:
        metrics, und = pixel_metrics(total)
    else:
        ms = [pixel_metrics(c)[0] for c in live]
        metrics = {}
        for k in ("iou", "pixp", "pixr", "pixf1"):
            s = 0.0
            for m in ms:
                s += m[k]
            metrics[k] = s / len(ms)
        und = []
    return row(key, metrics, counts=total, images=len(live), level=level, undefined=und)


def report(version, task, cfg, parts, tables, warnings):
    return {
        "config": cfg,
        "input_hash": content_hash(parts),
        "tables": tables,
        "task": task,
        "tool_version": version,
        "warnings": warnings,
    }


def aj_report(version, mpath, ppath):
    images = load_manifest(mpath, 0.0)
    preds = json.loads(ppath.read_bytes())["predictions"]
    verdict = {}
    warnings = []
    for p in preds:
        gen = p.get("generator")
        hits = [i for i, r in enumerate(images) if (r["uid"], r["role"], r["generator"]) == (p["uid"], p["role"], gen)]
        if not hits:
            warnings.append("prediction for unknown image %s/%s/%s ignored" % (p["uid"], p["role"], gen or "-"))
            continue
        verdict[hits[0]] = p["label"] if "label" in p else ("fake" if p["score"] >= 0.5 else "real")
    reals = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    fakes = {}
    for i, r in enumerate(images):
        v = verdict[i]
        if r["role"] == "real":
            reals["fp" if v == "fake" else "tn"] += 1
        else:
            c = fakes.setdefault(r["generator"], {"tp": 0, "fp": 0, "tn": 0, "fn": 0})
            c["tp" if v == "fake" else "fn"] += 1

    def aj_row(key, c):
        prec = c["tp"] / (c["tp"] + c["fp"]) if c["tp"] + c["fp"] else 0.0
        rec = c["tp"] / (c["tp"] + c["fn"])
        real_acc = c["tn"] / (c["tn"] + c["fp"])
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        return row(key, {"acc": 0.5 * (real_acc + rec), "precision": prec, "recall": rec, "f1": f1}, counts=c)

    total = dict(reals)
    for c in fakes.values():
        for k in total:
            total[k] += c[k]
    rows = [aj_row("all", total)]
    for g in sorted(fakes):
        rows.append(aj_row(g, {k: reals[k] + fakes[g][k] for k in reals}))
    return report(
        version, "aj", config(),
        [("manifest", mpath.read_bytes()), ("predictions", ppath.read_bytes())],
        {"real_negatives": "shared", "rows": rows}, warnings,
    )


def pad_report(version, mpath, ppath):
    images = load_manifest(mpath, 0.0)
    preds = {}
    for p in json.loads(ppath.read_bytes())["predictions"]:
        preds[find_fake(images, p["uid"], p.get("generator"))] = p["masks"]
    per_cat = {name: [] for name, _ in CATEGORIES}
    per_all = []
    for i, r in enumerate(images):
        if r["role"] != "fake":
            continue
        w, h = r["width"], r["height"]
        tot = {"tp": 0, "fp": 0, "fn": 0}
        for name, _ in CATEGORIES:
            gt = union([polygon_mask(a["polygon"], w, h) for a in r["annotations"] if a["category"] == name], w, h)
            pm = preds[i].get(name)
            pred = rle_mask(pm, w, h) if pm else blank(w, h)
            c = count(pred, gt)
            per_cat[name].append(c)
            for k in tot:
                tot[k] += c[k]
        per_all.append(tot)
    rows = [pooled_row(name, level, per_cat[name], "micro") for name, level in CATEGORIES]
    rows.append(pooled_row("all", None, per_all, "micro"))
    return report(
        version, "pad", config(),
        [("manifest", mpath.read_bytes()), ("predictions", ppath.read_bytes())],
        {"pooling": "micro", "rows": rows}, [],
    )


def ca_pad_report(version, mpath, ppath, pooling):
    images = load_manifest(mpath, 0.0)
    preds = {}
    for p in json.loads(ppath.read_bytes())["predictions"]:
        preds[find_fake(images, p["uid"], p.get("generator"))] = p["mask"]
    per_image = []
    for i, r in enumerate(images):
        if r["role"] != "fake":
            continue
        w, h = r["width"], r["height"]
        gt = union([polygon_mask(a["polygon"], w, h) for a in r["annotations"]], w, h)
        per_image.append(count(rle_mask(preds[i], w, h), gt))
    return report(
        version, "ca-pad", config(pooling=pooling),
        [("manifest", mpath.read_bytes()), ("predictions", ppath.read_bytes())],
        {"pooling": pooling, "rows": [pooled_row("all", None, per_image, pooling)]}, [],
    )


def instance_report(version, mpath, ppath, t, agnostic, tau):
    images = load_manifest(mpath, tau)
    preds = {}
    for p in json.loads(ppath.read_bytes())["predictions"]:
        preds[find_fake(images, p["uid"], p.get("generator"))] = p["instances"]
    keys = ["all"] if agnostic else [name for name, _ in CATEGORIES]
    tallies = {k: {"predictions": 0, "true_positives": 0, "ground_truth": 0, "indicated": 0} for k in keys}

    def key(cat):
        return "all" if agnostic else cat

    for i, r in enumerate(images):
        if r["role"] != "fake":
            continue
        w, h = r["width"], r["height"]
        gts = [(key(a["category"]), polygon_mask(a["polygon"], w, h)) for a in r["annotations"]]
        hit_gt = [False] * len(gts)
        for p in preds.get(i, []):
            k = key(p["category"])
            m = region_mask(p["region"], w, h)
            a = area(m)
            hit = False
            for g, (gk, gm) in enumerate(gts):
                inter = count(m, gm)["tp"]
                if gk == k and inter / a >= t:
                    hit = True
                    hit_gt[g] = True
            tallies[k]["predictions"] += 1
            tallies[k]["true_positives"] += hit
        for (gk, _), ind in zip(gts, hit_gt):
            tallies[gk]["ground_truth"] += 1
            tallies[gk]["indicated"] += ind

    def inst_row(k, tl):
        und = []
        prec = div(tl["true_positives"], tl["predictions"], "precision", und)
        rec = div(tl["indicated"], tl["ground_truth"], "recall", und)
        if prec + rec == 0:
            und.append("f1")
            f1 = 0.0
        else:
            f1 = 2 * prec * rec / (prec + rec)
        return row(k, {"precision": prec, "recall": rec, "f1": f1}, tally=tl, undefined=und)

    rows = [] if agnostic else [inst_row(k, tallies[k]) for k in keys]
    total = {f: sum(tallies[k][f] for k in keys) for f in tallies[keys[0]]}
    rows.append(inst_row("all", total))
    mode = "category_agnostic" if agnostic else "category_aware"
    return report(
        version, "instances", config(t=t, tau=tau, instance_mode=mode),
        [("manifest", mpath.read_bytes()), ("predictions", ppath.read_bytes())],
        {"mode": mode, "rows": rows, "t": t}, [],
    )


def main():
    fixtures = Path(sys.argv[1])
    version = tool_version(fixtures.parent.parent)
    manifest = fixtures / "bundled" / "manifest.json"
    hand = fixtures / "handcrafted"
    out = hand / "expected"
    out.mkdir(exist_ok=True)
    reports = {
        "aj.json": aj_report(version, manifest, hand / "aj.json"),
        "pad.json": pad_report(version, manifest, hand / "pad.json"),
        "ca_pad_macro.json": ca_pad_report(version, manifest, hand / "ca_pad.json", "macro"),
        "instances.json": instance_report(version, manifest, hand / "instances.json", 0.5, False, 0.0),
        "instances_agnostic.json": instance_report(version, manifest, hand / "instances.json", 0.25, True, 0.5),
    }
    for name, rep in reports.items():
        (out / name).write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
