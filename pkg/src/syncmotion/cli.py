"""Command-line entry point: ``syncmotion <command> [options]``.

Commands: gen-data, train, pool, extract, eval, viz-filters. Every command
that writes a directory builds it under a temporary sibling name and renames
it into place, so a zero exit status means the outputs are complete. The
effective configuration is saved next to the outputs as ``config.txt``.
"""

import argparse
import contextlib
import csv
import os
import shutil
import sys
import tempfile

import numpy as np

from . import bundle, config, data, modelio, pipeline, sae, skmeans, viz, vtb

CONFIG_NAME = "config.txt"


class CliError(Exception):
    pass


# -- helpers ----------------------------------------------------------------

def _load_config(path):
    cfg = config.load(path) if path else config.RunConfig()
    config.validate(cfg)
    return cfg


@contextlib.contextmanager
def _output_dir(path):
    """Yield a scratch directory that replaces `path` only on success."""
    path = os.path.abspath(path)
    parent = os.path.dirname(path)
    if os.path.exists(path):
        if not os.path.isdir(path):
            raise CliError(f"{path} exists and is not a directory")
        if os.listdir(path) and not os.path.isfile(os.path.join(path, bundle.MANIFEST)):
            raise CliError(f"refusing to overwrite non-empty directory {path} (not a bundle)")
    try:
        os.makedirs(parent, exist_ok=True)
        tmp = tempfile.mkdtemp(prefix=".tmp-" + os.path.basename(path) + "-", dir=parent)
    except OSError as exc:
        raise CliError(f"cannot write to {parent}: {exc.strerror}") from exc
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if os.path.exists(path):
        shutil.rmtree(path)
    os.replace(tmp, path)


def _sources(cfg):
    if not cfg.source_path:
        return data.synthetic_images(cfg.source_images, cfg.source_size, cfg.seed, blur=cfg.source_blur)
    p = cfg.source_path
    if os.path.isdir(p):
        names = sorted(n for n in os.listdir(p) if n.endswith(".vtb"))
        if not names:
            raise CliError(f"source_path {p} holds no .vtb images")
        return [vtb.load(os.path.join(p, n)) for n in names]
    arr = vtb.load(p)
    if arr.ndim == 2:
        return [arr]
    if arr.ndim == 3:
        return list(arr)
    raise CliError(f"source_path {p}: expected (H, W) or (n, H, W) images, got shape {arr.shape}")


def _train_subset(ds, cfg):
    if len(ds) <= cfg.train_samples:
        return ds
    rng = np.random.default_rng(cfg.seed)
    return ds.subset(np.sort(rng.choice(len(ds), cfg.train_samples, replace=False)))


def _fit_whitening(ds, cfg):
    kept = cfg.retained_dims or None
    if cfg.mode == "pair":
        if ds.dims[0] != 2:
            raise CliError(f"pair mode needs two-frame patches, dataset has T={ds.dims[0]}")
        frames = ds.patches.reshape(len(ds) * 2, -1)
        return data.fit_whitening(frames, kept, cfg.eigenvalue_floor, cfg.retained_variance)
    return data.fit_whitening(ds, kept, cfg.eigenvalue_floor, cfg.retained_variance)


def _write_trace(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(rows):
            w.writerow([i] + [repr(float(v)) for v in row])


def _load_videos(path):
    """Videos from a dataset bundle or a directory of ``.vtb`` blocks.

    Returns ``(videos, labels, ids)``; unlabelled videos get label -1. A
    directory may carry ``labels.csv`` with columns ``video_id,label``.
    """
    if not os.path.isdir(path):
        raise CliError(f"{path} is not a directory")
    if os.path.isfile(os.path.join(path, bundle.MANIFEST)):
        ds = data.load_dataset(path)
        labels = ds.labels if ds.labels is not None else np.full(len(ds), -1)
        return list(ds.patches), np.asarray(labels, dtype=np.int64), [f"{i:06d}" for i in range(len(ds))]
    names = sorted(n for n in os.listdir(path) if n.endswith(".vtb"))
    if not names:
        raise CliError(f"{path}: no videos (.vtb files) found")
    ids = [n[:-4] for n in names]
    videos = [data.as_video_block(vtb.load(os.path.join(path, n))) for n in names]
    known = {}
    label_file = os.path.join(path, "labels.csv")
    if os.path.isfile(label_file):
        with open(label_file, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                known[row["video_id"]] = int(row["label"])
    return videos, np.array([known.get(i, -1) for i in ids], dtype=np.int64), ids


def _sample_rows(X, limit, seed):
    if limit and X.shape[0] > limit:
        X = X[np.sort(np.random.default_rng(seed).choice(X.shape[0], limit, replace=False))]
    return X


# -- commands ---------------------------------------------------------------

def cmd_gen_data(args, cfg):
    if args.kind == "sinusoids":
        ds = data.generate_sinusoid_dataset(cfg.patch_count, cfg.sinusoid_n, cfg.sinusoid_freq,
                                            cfg.sinusoid_max_shift, cfg.seed)
    elif args.kind == "translations":
        ds = data.generate_translating_patches(_sources(cfg), cfg.patch_count, cfg.patch_dims,
                                               cfg.max_shift, cfg.seed + 1)
    else:
        ds = data.generate_direction_clips(_sources(cfg), cfg.clips_per_class, cfg.clip_dims,
                                           cfg.clip_speed, cfg.seed + 1)
    with _output_dir(args.out) as out:
        data.save_dataset(out, ds, kind=args.kind)
        config.save(os.path.join(out, CONFIG_NAME), cfg)
    print(f"wrote {len(ds)} {args.kind} samples of {'x'.join(map(str, ds.dims))} to {args.out}")


def cmd_train(args, cfg):
    ds = _train_subset(data.load_dataset(args.data), cfg)
    if args.model == "ae-baseline" and cfg.mode != "sequence":
        raise CliError("the autoencoder baseline only supports mode = sequence")
    if args.model == "kmeans" and cfg.mode != "sequence":
        raise CliError("the K-means baseline only supports mode = sequence")
    wt = _fit_whitening(ds, cfg)
    N, dims = wt.retained_dims, ds.dims
    tcfg = skmeans.TrainConfig(cfg.eta, cfg.epochs, cfg.seed, cfg.normalize_every, cfg.eta_decay,
                               cfg.contrast_epsilon)
    ocfg = sae.OptimConfig(cfg.learning_rate, cfg.momentum, cfg.batch_size, cfg.sae_epochs, cfg.seed)
    diverged = None
    if args.model == "skmeans":
        m = skmeans.init_model(cfg.mode, cfg.units, N, cfg.seed, dims, np.float32, cfg.contrast_epsilon)
        m, trace = skmeans.train(m, ds, tcfg, wt)
        header, rows = ["epoch", "loss"], [(v,) for v in trace]
    elif args.model == "kmeans":
        m, trace = skmeans.train_kmeans(cfg.units, ds, tcfg, wt, frame_dims=dims)
        header, rows = ["epoch", "loss"], [(v,) for v in trace]
    else:
        if args.model == "sae":
            m = sae.init_sae(cfg.mode, cfg.units, N, cfg.seed, cfg.sae_lambda, tied=cfg.tied,
                             use_bias=cfg.use_bias, frame_dims=dims, dtype=np.float32)
        else:
            m = sae.init_ae(cfg.units, N, cfg.seed, cfg.sae_lambda, frame_dims=dims, dtype=np.float32)
        inputs = skmeans.prepare_inputs(m, ds, wt)
        try:
            m, trace = sae.train(m, inputs if len(inputs) > 1 else inputs[0], ocfg)
        except sae.TrainingDiverged as exc:
            diverged, trace = exc, exc.trace
        header = ["epoch", "reconstruction", "contraction", "total"]
        rows = [(r, c, r + cfg.sae_lambda * c) for r, c in trace]
    if diverged is not None:
        # keep the partial trace for diagnosis, but no model bundle
        os.makedirs(args.out, exist_ok=True)
        _write_trace(os.path.join(args.out, "loss_trace.csv"), header, rows)
        raise CliError(f"training diverged: {diverged}")
    with _output_dir(args.out) as out:
        modelio.save_model(out, m, wt, {"training_samples": len(ds), "seed": cfg.seed})
        _write_trace(os.path.join(out, "loss_trace.csv"), header, rows)
        config.save(os.path.join(out, CONFIG_NAME), cfg)
    print(f"trained {args.model} ({m.units} units on {N} whitened dims, {len(ds)} samples); "
          f"final loss {rows[-1][-1]:.6g}")


def _hidden_sample(model, whitening, X, cfg):
    X = _sample_rows(np.asarray(X), cfg.vocab_samples, cfg.seed)
    return np.asarray(model.hiddens(whitening.apply(X, np.float32) if whitening is not None else X),
                      dtype=np.float64)


def cmd_pool(args, cfg):
    model, wt, _ = modelio.load_model(args.model)
    if model.mode != "sequence":
        raise CliError("pooling needs a sequence-mode model")
    ds = data.load_dataset(args.data)
    H = _hidden_sample(model, wt, ds.flat(), cfg)
    pooling = pipeline.pool_features(H, cfg.pooling_centroids, cfg.seed, cfg.vocab_iterations)
    counts = pipeline.pooling_counts(pooling, H)
    with _output_dir(args.out) as out:
        modelio.save_pooling(out, pooling, counts)
        config.save(os.path.join(out, CONFIG_NAME), cfg)
    print(f"pooled {model.units} units into {pooling.K} groups")


def cmd_extract(args, cfg):
    model, wt, _ = modelio.load_model(args.model)
    videos, labels, ids = _load_videos(args.videos)
    dcfg = pipeline.DescriptorConfig.from_run_config(cfg)
    pooling_counts = None
    if cfg.codebook:
        pca, codebook, pooling, _ = modelio.load_codebook(cfg.codebook)
        if cfg.use_pooling and pooling is None:
            raise CliError(f"use_pooling is set but codebook {cfg.codebook} has no pooling layer")
        ext = pipeline.FeatureExtractor(model, wt, dcfg, pca, pooling if cfg.use_pooling else None)
    elif cfg.fit_codebook:
        pooling = None
        if cfg.use_pooling:
            plain = pipeline.FeatureExtractor(model, wt, dcfg)
            codes = np.concatenate([plain.subblock_codes(v).reshape(-1, model.units) for v in videos])
            codes = _sample_rows(codes, cfg.vocab_samples, cfg.seed)
            pooling = pipeline.pool_features(codes, cfg.pooling_centroids, cfg.seed, cfg.vocab_iterations)
            pooling_counts = pipeline.pooling_counts(pooling, codes)
        ext = pipeline.fit_extractor(model, wt, dcfg, videos, pooling, cfg.vocab_samples, cfg.seed)
        desc = np.concatenate([ext.descriptors(v) for v in videos])
        codebook = pipeline.build_vocabulary(_sample_rows(desc, cfg.vocab_samples, cfg.seed),
                                             cfg.vocab_size, cfg.seed, cfg.vocab_iterations)
    else:
        raise CliError("histograms need a codebook: set 'codebook = PATH' to a codebook bundle "
                       "(written by a previous extract run as <out>/codebook) or 'fit_codebook = true'")
    per_video = [ext.descriptors(v) for v in videos]
    hists = np.asarray([pipeline.histogram_from_words(codebook.assign(d), codebook.K).weights
                        for d in per_video])
    with _output_dir(args.out) as out:
        bundle.save_arrays(out, {
            "descriptors": np.concatenate(per_video),
            "descriptor_counts": np.array([len(d) for d in per_video], dtype=np.float64),
            "histograms": hists,
            "labels": labels.astype(np.float64),
        })
        with open(os.path.join(out, "ids.txt"), "w", encoding="utf-8") as fh:
            fh.writelines(i + "\n" for i in ids)
        if not cfg.codebook:
            modelio.save_codebook(os.path.join(out, "codebook"), ext, codebook, pooling_counts)
        bundle.write_manifest(out, {
            "kind": "histograms",
            "videos": len(videos),
            "vocab_size": codebook.K,
            "descriptor_dims": ext.pca.dims,
            "subblocks_per_superblock": dcfg.subblocks_per_superblock,
            "codebook": cfg.codebook or "codebook",
            "pooling": "yes" if ext.pooling is not None else "no",
        })
        config.save(os.path.join(out, CONFIG_NAME), cfg)
    print(f"extracted {sum(len(d) for d in per_video)} descriptors from {len(videos)} videos "
          f"({dcfg.subblocks_per_superblock} sub blocks per super block)")


def _load_histograms(path):
    man = bundle.read_manifest(path)
    if man.get("kind") != "histograms":
        raise CliError(f"{path}: not an extract output (kind={man.get('kind')!r})")
    H = bundle.load_array(path, "histograms")
    labels = bundle.load_array(path, "labels").astype(np.int64)
    with open(os.path.join(path, "ids.txt"), encoding="utf-8") as fh:
        ids = [line.rstrip("\n") for line in fh]
    if not (len(ids) == len(labels) == H.shape[0]):
        raise CliError(f"{path}: histogram, label and id counts disagree")
    if np.any(labels < 0):
        raise CliError(f"{path}: some videos are unlabelled; evaluation needs labels for every video")
    return H, labels, ids


def cmd_eval(args, cfg):
    Htr, ytr, ids_tr = _load_histograms(args.train)
    if args.loo:
        Hte, yte, ids = None, None, ids_tr
    else:
        Hte, yte, ids = _load_histograms(args.test)
        if Hte.shape[1] != Htr.shape[1]:
            raise CliError(f"vocabulary mismatch: train histograms have {Htr.shape[1]} bins, "
                           f"test histograms {Hte.shape[1]}")
    rep = pipeline.evaluate(Htr, ytr, Hte, yte, k=cfg.knn_k, loo=args.loo, epsilon=cfg.chi2_epsilon)
    gamma = cfg.chi2_gamma or None
    Ktr, gamma = pipeline.chi2_kernel_matrix(Htr, None, gamma, cfg.chi2_epsilon)
    out_dir = args.out or (args.train if args.loo else args.test)
    os.makedirs(out_dir, exist_ok=True)
    pipeline.write_predictions_csv(os.path.join(out_dir, "predictions.csv"), ids, rep)
    pipeline.write_confusion_csv(os.path.join(out_dir, "confusion.csv"), rep)
    vtb.save(os.path.join(out_dir, "kernel_train.vtb"), Ktr)
    if not args.loo:
        Kte, _ = pipeline.chi2_kernel_matrix(Hte, Htr, gamma, cfg.chi2_epsilon)
        vtb.save(os.path.join(out_dir, "kernel_test.vtb"), Kte)
    correct = int(np.sum(rep.true == rep.predicted))
    line = f"accuracy {rep.accuracy:.4f} ({correct}/{len(rep.true)}) k={cfg.knn_k} gamma={gamma!r}"
    with open(os.path.join(out_dir, "accuracy.txt"), "w", encoding="utf-8") as fh:
        fh.write(line + "\n")
    print(line)


def cmd_viz(args, cfg):
    try:
        model, wt, _ = modelio.load_model(args.model)
    except bundle.BundleError as exc:
        raise CliError(str(exc)) from exc
    filters, frame = modelio.pixel_filters(model, wt)
    if cfg.viz_max_filters:
        filters = filters[: cfg.viz_max_filters]
    tile = frame or viz.tile_shape_for(filters.shape[2], model.frame_dims[1:] if model.frame_dims else None)
    if args.pooling:
        pooling, counts = modelio.load_pooling(args.pooling)
        if pooling.D != model.units:
            raise CliError(f"pooling layer covers {pooling.D} units but the model has {model.units}")
        if counts is None:
            raise CliError(f"{args.pooling}: no assignment counts stored for the pooling layer")
        report = pipeline.pooling_report(pooling, counts=counts)
        first = modelio.pixel_filters(model, wt)[0][:, 0, :]
        img = viz.grouping_mosaic(first, report, tile, gap=cfg.viz_gap)
    else:
        img = viz.mosaic(filters, tile, cfg.viz_gap)
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    tmp = args.out + ".tmp"
    viz.write_pgm(tmp, img)
    os.replace(tmp, args.out)
    print(f"wrote {img.shape[1]}x{img.shape[0]} mosaic to {args.out}")


# -- entry point ------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="syncmotion", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="key = value run configuration (defaults if omitted)")
        sp.set_defaults(func=func)
        return sp

    g = add("gen-data", cmd_gen_data, "generate a synthetic dataset bundle")
    g.add_argument("--kind", required=True, choices=["translations", "sinusoids", "directions"])
    g.add_argument("--out", required=True)

    t = add("train", cmd_train, "fit whitening and a feature model")
    t.add_argument("--model", required=True, choices=["skmeans", "sae", "kmeans", "ae-baseline"])
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)

    pl = add("pool", cmd_pool, "fit a pooling layer over a model's hidden units")
    pl.add_argument("--model", required=True)
    pl.add_argument("--data", required=True)
    pl.add_argument("--out", required=True)

    e = add("extract", cmd_extract, "compute descriptors and word histograms for videos")
    e.add_argument("--model", required=True)
    e.add_argument("--videos", required=True)
    e.add_argument("--out", required=True)

    v = add("eval", cmd_eval, "chi-squared k-NN classification of word histograms")
    v.add_argument("--train", required=True)
    mode = v.add_mutually_exclusive_group(required=True)
    mode.add_argument("--test")
    mode.add_argument("--loo", action="store_true")
    v.add_argument("--out", help="report directory (default: the test or train directory)")

    z = add("viz-filters", cmd_viz, "write a PGM mosaic of a model's filters")
    z.add_argument("--model", required=True)
    z.add_argument("--out", required=True)
    z.add_argument("--pooling", help="pooling bundle; draws the per-group top-6 filter mosaic")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        args.func(args, cfg)
    except (CliError, ValueError, OSError, RuntimeError, KeyError) as exc:
        msg = exc.strerror + f": {exc.filename}" if isinstance(exc, OSError) and exc.filename else exc
        print(f"syncmotion {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
