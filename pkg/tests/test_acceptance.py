"""Acceptance suite: one test per headline criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see one PASS/FAIL line per
criterion (the lines are printed even without ``-s``).
"""

import json
import math
import time
from collections import Counter

import numpy as np
import pytest

from clampkit import cli, clamp, training
from clampkit.checkpoint import ChecksumError, load_checkpoint, loads, save_checkpoint
from clampkit.cifparse import parse_file, to_structure
from clampkit.config import RunConfig
from clampkit.corpus import batches, load_manifest, load_structure
from clampkit.crystal import CrystalStructure, DegenerateCellError, GaussianConfig, Lattice, build_graph, neighbor_list
from clampkit.encoders import build_vocab, tokenize_batch
from clampkit.numcore import Tape, finite_diff_check

from helpers import FIXTURES
from oracles import brute_force_neighbors


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail, started):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({time.perf_counter() - started:.1f}s)")
        assert ok, f"{name}: {detail}"
    return emit


def three_sigma(p, n):
    return 3 * math.sqrt(p * (1 - p) / n)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    assert cli.main(["synth", "--out", str(root / "train"), "--classes", "8", "--per-class", "64",
                     "--seed", "42"]) == 0
    assert cli.main(["synth", "--out", str(root / "held"), "--classes", "8", "--per-class", "16",
                     "--seed", "4242", "--id-prefix", "held"]) == 0
    return root


# --- 1. gradients ------------------------------------------------------------

def test_gradient_full_loss(corpus, report):
    started = time.perf_counter()
    recs = load_manifest(corpus / "train" / "manifest.jsonl")
    pair = [recs[0], recs[64]]  # two different classes
    # A broad edge basis spanning the cutoff keeps every edge feature well
    # above the level where eps=1e-5 central differences drown in roundoff.
    gauss = GaussianConfig(0.0, 6.0, 1.5, var=2.0)
    run = RunConfig(d_v=4, conv_layers=1, d_m=8, text_layers=1, heads=2, d=8, max_len=16, cutoff=6.0,
                    max_neighbors=6, gauss_dmin=gauss.dmin, gauss_dmax=gauss.dmax, gauss_step=gauss.step,
                    gauss_var=gauss.var)
    vocab = build_vocab([r.text for r in pair], 64, run.max_len)
    cfg = run.model(len(vocab))
    graphs = [build_graph(load_structure(r), run.cutoff, run.max_neighbors, run.gaussian) for r in pair]
    ids, eos = tokenize_batch([r.text for r in pair], vocab)
    params = clamp.init_params(cfg, 0, np.float64)
    err = finite_diff_check(lambda tape, P: clamp.batch_loss(tape, P, graphs, ids, eos, cfg), params, eps=1e-5)
    n = sum(v.size for v in params.values())
    elapsed = time.perf_counter() - started
    report("gradient check", err < 1e-4 and elapsed < 60,
           f"max rel err {err:.2e} over {n} scalars (< 1e-4)", started)


# --- 2. neighbor lists -------------------------------------------------------

def test_neighbor_oracle(report):
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    checked = edges = 0
    bad = []
    while checked < 100:
        params = (*rng.uniform(3.0, 8.0, 3), *rng.uniform(60, 120, 3))
        try:
            lat = Lattice(*params)
        except DegenerateCellError:
            continue
        cutoff = float(rng.uniform(2.0, 8.0))
        # the 7x7x7 reference block is exhaustive only when 3 shells suffice
        if np.any(np.ceil(cutoff / lat.perpendicular_widths()) > 3):
            continue
        n = int(rng.integers(1, 7))
        s = CrystalStructure(lat, rng.integers(1, 90, n), rng.random((n, 3)), None)
        want = brute_force_neighbors(lat.parameters, s.frac.tolist(), cutoff, reach=3)
        got = [(e.i, e.j, e.image, e.distance) for c in neighbor_list(s, cutoff) for e in c]
        dist = {w[:3]: w[3] for w in want}
        same = Counter(g[:3] for g in got) == Counter(w[:3] for w in want)
        if not (same and all(abs(dist[g[:3]] - g[3]) <= 1e-9 for g in got)):
            bad.append(checked)
        edges += len(got)
        checked += 1
    report("neighbor oracle", not bad and time.perf_counter() - started < 60,
           f"{checked - len(bad)}/100 structures match ({edges} edges)", started)


# --- 3. CIF fixtures ---------------------------------------------------------

def test_cif_fixtures(report):
    started = time.perf_counter()
    expected = {"minimal_p1.cif": 1, "rocksalt.cif": 8, "quoted.cif": 2, "semicolon.cif": 2,
                "uncertainty.cif": 3, "partial.cif": 2}
    got = {name: len(to_structure(parse_file(FIXTURES / name))) for name in expected}
    salt = Counter(to_structure(parse_file(FIXTURES / "rocksalt.cif")).elements.tolist())
    ok = got == expected and salt == {11: 4, 17: 4}
    report("CIF fixtures", ok, f"site counts {got}; rock salt Na={salt[11]} Cl={salt[17]}", started)


# --- 4. loss sanity ----------------------------------------------------------

def loss_of(logits):
    tape = Tape(np.float64)
    return float(clamp.clamp_loss(tape, tape.const(np.asarray(logits, dtype=np.float64))).value)


def test_loss_sanity(corpus, report):
    started = time.perf_counter()
    equal = all(loss_of(np.full((b, b), 1.7)) == math.log(b) for b in (2, 3, 8, 32, 100))
    single = loss_of([[5.0]]) == 0.0
    run = RunConfig(d=256, manifest=str(corpus / "train" / "manifest.jsonl"))
    recs = load_manifest(run.manifest)
    vocab = build_vocab([r.text for r in recs], run.vocab_size, run.max_len)
    cfg = run.model(len(vocab))
    params = clamp.init_params(cfg, run.seed, np.float64, log_scale=0.0)
    by_id = {r.id: r for r in recs}
    losses = []
    drawn = (batches(recs, 32, 7, 0) + batches(recs, 32, 7, 1))[:20]  # 16 batches per epoch
    for ids in drawn:
        chosen = [by_id[i] for i in ids]
        graphs = [build_graph(load_structure(r), run.cutoff, run.max_neighbors, run.gaussian) for r in chosen]
        tok, eos = tokenize_batch([r.text for r in chosen], vocab)
        tape = Tape(np.float64)
        losses.append(float(clamp.batch_loss(tape, tape.leaves(params), graphs, tok, eos, cfg).value))
    mean = float(np.mean(losses))
    ok = equal and single and len(losses) == 20 and abs(mean - math.log(32)) < 0.1
    report("loss sanity", ok, f"equal logits=ln B: {equal}; B=1 -> 0: {single}; "
           f"random-init mean {mean:.4f} vs ln 32 = {math.log(32):.4f}", started)


# --- 5. invariances ----------------------------------------------------------

def test_invariance_suite(corpus, report):
    started = time.perf_counter()
    rng = np.random.default_rng(5)
    recs = load_manifest(corpus / "train" / "manifest.jsonl")[::37][:12]
    run = RunConfig(d_v=16, conv_layers=2, d_m=32, text_layers=2, heads=4, d=16, max_len=32, dtype="f64")
    vocab = build_vocab([r.text for r in recs], 128, run.max_len)
    cfg = run.model(len(vocab))
    params = clamp.init_params(cfg, 11, np.float64)
    params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in params.items()}
    graphs = [build_graph(load_structure(r), run.cutoff, run.max_neighbors, run.gaussian) for r in recs]

    # node permutation: relabel atoms and shuffle edge order
    node_err = 0.0
    base = clamp.embed_crystals(graphs, params, cfg)
    for k, g in enumerate(graphs):
        perm = rng.permutation(g.num_nodes)
        inv = np.argsort(perm)
        order = rng.permutation(g.num_edges)
        h = type(g)(g.node_elements[perm], inv[g.src][order], inv[g.dst][order], g.edge_features[order],
                    g.distances[order], g.images[order])
        moved = clamp.embed_crystals([h], params, cfg)[0]
        node_err = max(node_err, float(np.max(np.abs(moved - base[k])) / np.max(np.abs(base[k]))))

    # batch permutation of the loss
    tok, eos = tokenize_batch([r.text for r in recs], vocab)

    def loss(order):
        tape = Tape(np.float64)
        return float(clamp.batch_loss(tape, tape.leaves(params), [graphs[i] for i in order], tok[order],
                                      eos[order], cfg).value)

    ident = np.arange(len(recs))
    batch_err = max(abs(loss(rng.permutation(len(recs))) - loss(ident)) for _ in range(5))

    # post-eos padding: garbage after eos must not move the text embedding
    tape = Tape(np.float64)
    T = clamp.text_embeddings(tape, tok, eos, tape.leaves(params), cfg).value
    noisy = tok.copy()
    for b, e in enumerate(eos):
        noisy[b, e + 1:] = rng.integers(0, len(vocab), tok.shape[1] - e - 1)
    tape = Tape(np.float64)
    pad_same = np.array_equal(clamp.text_embeddings(tape, noisy, eos, tape.leaves(params), cfg).value, T)

    # unit norms, in both working precisions
    norm_err = max(float(np.max(np.abs(np.linalg.norm(m.astype(np.float64), axis=1) - 1)))
                   for dtype in (np.float64, np.float32)
                   for p in ({k: v.astype(dtype) for k, v in params.items()},)
                   for m in (clamp.embed_crystals(graphs, p, cfg),
                             clamp.embed_texts([r.text for r in recs], vocab, p, cfg)))
    ok = node_err <= 1e-10 and batch_err <= 1e-12 and pad_same and norm_err <= 1e-5
    report("invariance suite", ok, f"node perm {node_err:.1e} (<= 1e-10); batch perm {batch_err:.1e} "
           f"(<= 1e-12); post-eos invariant: {pad_same}; max |norm-1| {norm_err:.1e} (<= 1e-5)", started)


# --- 6-8. end to end, determinism, checkpoints -------------------------------

def train_cli(manifest, out):
    return cli.main(["train", "--manifest", str(manifest), "--out", str(out), "--threads", "1"])


@pytest.fixture(scope="module")
def trained(corpus):
    started = time.perf_counter()
    assert train_cli(corpus / "train" / "manifest.jsonl", corpus / "run") == 0
    return corpus / "run", time.perf_counter() - started


def eval_cli(capsys, ckpt, held):
    capsys.readouterr()
    code = cli.main(["eval", "--ckpt", str(ckpt), "--manifest", str(held / "manifest.jsonl"), "--threads", "1",
                     "--prompts", str(held / "prompts.txt"), "--labels", str(held / "labels.txt")])
    return code, json.loads(capsys.readouterr().out)


def test_end_to_end(corpus, trained, capsys, report):
    started = time.perf_counter()
    run_dir, train_time = trained
    held = corpus / "held"
    code, ev = eval_cli(capsys, run_dir / "best.clmp", held)
    assert code == 0 and ev["n"] == 128 and ev["zero_shot_classes"] == 8

    # classify every held-out CIF and read the rank-1 prompt
    prompts = (held / "prompts.txt").read_text().splitlines()
    labels = (held / "labels.txt").read_text().split()
    hits = 0
    records = load_manifest(held / "manifest.jsonl")
    for r in records:
        capsys.readouterr()
        assert cli.main(["classify", "--ckpt", str(run_dir / "best.clmp"), "--cif", str(r.cif_path),
                         "--prompts", str(held / "prompts.txt")]) == 0
        top = capsys.readouterr().out.splitlines()[0].split("\t")[2]
        hits += labels[prompts.index(top)] == r.labels[0]
    classify_acc = hits / len(records)

    # untrained baseline on the same gallery
    model = training.Model.load(run_dir / "best.clmp")
    blank = training.Model(model.run, model.vocab, clamp.init_params(model.cfg, model.run.seed, model.run.np_dtype))
    recs = sorted(records, key=lambda r: r.id)
    C = blank.embed_graphs([blank.graph(r) for r in recs])
    base_match = training.retrieval_metrics(C, blank.embed_texts([r.text for r in recs]))
    base_zero = training.zero_shot_accuracy(C, blank.embed_texts(prompts), [labels.index(r.labels[0]) for r in recs])
    n = len(recs)
    chance_ok = (abs(base_match["accuracy_crystal_to_text"] - 1 / n) <= three_sigma(1 / n, n)
                 and abs(base_zero - 1 / 8) <= three_sigma(1 / 8, n))

    epochs = json.loads((run_dir / "metrics.json").read_text())["epochs"]
    losses = [e["train_loss"] for e in epochs]
    learning = len(epochs) <= 5 and losses[2] < math.log(32) and losses[2] < losses[0]

    ok = (ev["zero_shot_accuracy"] >= 0.9 and ev["accuracy_crystal_to_text"] >= 0.8
          and classify_acc == ev["zero_shot_accuracy"] and chance_ok and learning and train_time < 600)
    report("end-to-end synthetic run", ok,
           f"zero-shot {ev['zero_shot_accuracy']:.3f} (>= 0.9, classify agrees: {classify_acc:.3f}); "
           f"c2t matching {ev['accuracy_crystal_to_text']:.3f} (>= 0.8); untrained c2t "
           f"{base_match['accuracy_crystal_to_text']:.3f} vs 1/128, zero-shot {base_zero:.3f} vs 1/8; "
           f"train loss {' '.join(f'{x:.3f}' for x in losses)}; training {train_time:.0f}s", started)


def test_determinism(corpus, trained, tmp_path, report):
    started = time.perf_counter()
    run_dir, _ = trained
    again = tmp_path / "again"
    assert cli.main(["synth", "--out", str(tmp_path / "data"), "--classes", "8", "--per-class", "64",
                     "--seed", "42"]) == 0
    data_same = all((tmp_path / "data" / p.relative_to(corpus / "train")).read_bytes() == p.read_bytes()
                    for p in (corpus / "train").rglob("*") if p.is_file())
    # identical config (the manifest path is part of it), fresh output directory
    assert train_cli(corpus / "train" / "manifest.jsonl", again) == 0
    same = {name: (run_dir / name).read_bytes() == (again / name).read_bytes()
            for name in ("final.clmp", "best.clmp", "metrics.json")}
    report("determinism", data_same and all(same.values()),
           f"synth bytes identical: {data_same}; " + ", ".join(f"{k} identical: {v}" for k, v in same.items()),
           started)


def test_checkpoint_robustness(trained, tmp_path, report):
    started = time.perf_counter()
    path = trained[0] / "final.clmp"
    ckpt = load_checkpoint(path)
    save_checkpoint(tmp_path / "copy.clmp", ckpt)
    again = load_checkpoint(tmp_path / "copy.clmp")
    round_trip = ((tmp_path / "copy.clmp").read_bytes() == path.read_bytes()
                  and all(again.params[k].tobytes() == v.tobytes() and again.params[k].dtype == v.dtype
                          for k, v in ckpt.params.items()))

    data = path.read_bytes()
    name = "cgcnn.conv0.W_f"
    target = ckpt.params[name].tobytes()
    pos = data.index(target) + len(target) // 2
    bad = bytearray(data)
    bad[pos] ^= 0x10
    try:
        loads(bytes(bad))
        named = False
    except ChecksumError as exc:
        named = name in str(exc)
    truncated = []
    for cut in (1, 4, len(data) // 3, len(data) // 2):
        try:
            loads(data[:-cut])
            truncated.append(False)
        except ChecksumError:
            truncated.append(True)
    ok = round_trip and named and all(truncated)
    report("checkpoint robustness", ok, f"round trip bit-exact: {round_trip}; corrupted byte rejected naming "
           f"{name}: {named}; {sum(truncated)}/{len(truncated)} truncations rejected", started)
