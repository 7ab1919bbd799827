#!/usr/bin/env python3
"""Reference-based story metrics for `bpstory evaluate`.

Reads {"metric": name, "hypotheses": [str], "references": [[str]]} on stdin
and prints {"value": float, "versions": {package: version}} on stdout.
Exits with status 3 when the package behind a metric is not installed.
"""

import json
import sys
from importlib import metadata


def need(module, package):
    try:
        return __import__(module, fromlist=["_"])
    except ImportError:
        print(f"metric needs `{package}`: pip install {package}", file=sys.stderr)
        sys.exit(3)


def version(package):
    try:
        return metadata.version(package)
    except metadata.PackageNotFoundError:
        return "unknown"


def bleu(hyps, refs):
    sacrebleu = need("sacrebleu", "sacrebleu")
    width = max(len(r) for r in refs)
    streams = [[r[i] if i < len(r) else r[0] for r in refs] for i in range(width)]
    return sacrebleu.corpus_bleu(hyps, streams).score, {"sacrebleu": version("sacrebleu")}


def rouge(hyps, refs):
    scorer_mod = need("rouge_score.rouge_scorer", "rouge-score")
    scorer = scorer_mod.RougeScorer(["rougeL"], use_stemmer=True)
    scores = [max(scorer.score(r, h)["rougeL"].fmeasure for r in rs) for h, rs in zip(hyps, refs)]
    return 100.0 * sum(scores) / len(scores), {"rouge-score": version("rouge-score")}


def meteor(hyps, refs):
    need("nltk", "nltk")
    from nltk.translate.meteor_score import meteor_score

    try:
        scores = [meteor_score([r.split() for r in rs], h.split()) for h, rs in zip(hyps, refs)]
    except LookupError as e:
        print(f"nltk data missing ({e}); run: python -m nltk.downloader wordnet", file=sys.stderr)
        sys.exit(3)
    return 100.0 * sum(scores) / len(scores), {"nltk": version("nltk")}


def cider(hyps, refs):
    need("pycocoevalcap", "pycocoevalcap")
    from pycocoevalcap.cider.cider import Cider

    gts = {i: rs for i, rs in enumerate(refs)}
    res = {i: [h] for i, h in enumerate(hyps)}
    score, _ = Cider().compute_score(gts, res)
    return 100.0 * score, {"pycocoevalcap": version("pycocoevalcap")}


def mauve(hyps, refs):
    mauve_mod = need("mauve", "mauve-text")
    out = mauve_mod.compute_mauve(p_text=[r[0] for r in refs], q_text=hyps, verbose=False)
    return 100.0 * out.mauve, {"mauve-text": version("mauve-text")}


METRICS = {"bleu": bleu, "rouge": rouge, "meteor": meteor, "cider": cider, "mauve": mauve}


def main():
    req = json.load(sys.stdin)
    name = req["metric"]
    if name not in METRICS:
        print(f"unknown metric {name!r}", file=sys.stderr)
        return 2
    hyps, refs = req["hypotheses"], req["references"]
    if not hyps:
        print("no hypotheses", file=sys.stderr)
        return 2
    value, versions = METRICS[name](hyps, refs)
    json.dump({"value": value, "versions": versions}, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
