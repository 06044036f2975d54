"""Model bundles: weight arrays and whitening as VTB files plus a flat manifest."""

import os

import numpy as np

from . import bundle
from .data import WhiteningTransform
from .pipeline import Codebook, PCAProjection
from .sae import ContractiveAE, SaeModel
from .skmeans import KMeansModel, SkMeansModel


def save_model(directory, model, whitening=None, extra=None):
    os.makedirs(directory, exist_ok=True)
    weights = model.weights()
    bundle.save_arrays(directory, weights)
    entries = {
        "kind": model.kind,
        "mode": model.mode,
        "units": model.units,
        "input_dims": model.input_dims,
        "arrays": ",".join(weights),
        "dtype": str(next(iter(weights.values())).dtype),
        "frame_dims": bundle.fmt_dims(model.frame_dims) if model.frame_dims else "",
        "whitening": "yes" if whitening is not None else "no",
    }
    if hasattr(model, "lam"):
        entries["lambda"] = repr(float(model.lam))
    if whitening is not None:
        whitening.save(directory)
        entries["eigenvalue_floor"] = repr(whitening.eigenvalue_floor)
        entries["retained_dims"] = whitening.retained_dims
    entries.update(extra or {})
    bundle.write_manifest(directory, entries)


def load_model(directory):
    """Returns ``(model, whitening or None, manifest dict)``."""
    man = bundle.read_manifest(directory)
    kind = man.get("kind")
    if kind not in ("skmeans", "sae", "kmeans", "ae"):
        raise bundle.BundleError(f"{directory}: not a model bundle (kind={kind!r})")
    arrays = {name: bundle.load_array(directory, name) for name in man["arrays"].split(",") if name}
    frame_dims = bundle.dims(man["frame_dims"]) if man.get("frame_dims") else None
    if kind == "skmeans":
        model = SkMeansModel(man["mode"], frame_dims=frame_dims, **arrays)
    elif kind == "sae":
        model = SaeModel(man["mode"], lam=float(man.get("lambda", 0.5)), frame_dims=frame_dims, **arrays)
    elif kind == "kmeans":
        model = KMeansModel(arrays["W"], frame_dims)
    else:
        model = ContractiveAE(arrays["W"], arrays["bias"], arrays["out_bias"],
                              float(man.get("lambda", 0.5)), frame_dims)
    whitening = None
    if man.get("whitening") == "yes":
        whitening = WhiteningTransform.load(directory, eigenvalue_floor=float(man.get("eigenvalue_floor", 1e-8)))
    return model, whitening, man


def pixel_filters(model, whitening=None):
    """Filters mapped back to pixel space, one ``(T, N_frame)`` stack per unit.

    Whitened filters are de-whitened with the inverse projection. Sequence
    models are split into their per-frame slices; pair models yield the two
    frame filters side by side.
    """
    if model.mode == "pair":
        frames = [model.wx, model.wy] if isinstance(model, SaeModel) else [model.Wx, model.Wy]
        if whitening is not None:
            frames = [F @ whitening.inverse.T for F in frames]
        return np.stack(frames, axis=1), None
    W = np.asarray(model.W, dtype=np.float64)
    if whitening is not None:
        W = W @ whitening.inverse.T
    dims = model.frame_dims
    if dims is None or int(np.prod(dims)) != W.shape[1]:
        return W[:, None, :], None
    T, H, Wd = dims
    return W.reshape(W.shape[0], T, H * Wd), (H, Wd)


def save_codebook(directory, extractor, codebook, pooling_counts=None):
    """Descriptor PCA, vocabulary and (optional) pooling layer as one bundle."""
    os.makedirs(directory, exist_ok=True)
    pca = extractor.pca
    arrays = {"pca_mean": pca.mean, "pca_components": pca.components,
              "pca_variances": pca.variances, "centroids": codebook.centroids}
    if extractor.pooling is not None:
        arrays["pooling_centroids"] = extractor.pooling.centroids
        if pooling_counts is not None:
            arrays["pooling_counts"] = np.asarray(pooling_counts, dtype=np.float64)
    bundle.save_arrays(directory, arrays)
    cfg = extractor.cfg
    bundle.write_manifest(directory, {
        "kind": "codebook",
        "vocab_size": codebook.K,
        "descriptor_dims": pca.dims,
        "super_dims": bundle.fmt_dims(cfg.super_dims),
        "sub_dims": bundle.fmt_dims(cfg.sub_dims),
        "sub_stride": cfg.sub_stride,
        "overlap_fraction": repr(cfg.overlap_fraction),
        "pooling": "yes" if extractor.pooling is not None else "no",
        "training_seed": codebook.training_seed,
    })


def load_codebook(directory):
    """Returns ``(PCAProjection, Codebook, pooling Codebook or None, manifest)``."""
    man = bundle.read_manifest(directory)
    if man.get("kind") != "codebook":
        raise bundle.BundleError(f"{directory}: not a codebook bundle (kind={man.get('kind')!r})")
    pca = PCAProjection(bundle.load_array(directory, "pca_mean"),
                        bundle.load_array(directory, "pca_components"),
                        bundle.load_array(directory, "pca_variances"))
    codebook = Codebook(bundle.load_array(directory, "centroids"), int(man.get("training_seed", 0)))
    pooling = None
    if man.get("pooling") == "yes":
        pooling = Codebook(bundle.load_array(directory, "pooling_centroids"))
    return pca, codebook, pooling, man


def save_pooling(directory, pooling, counts):
    os.makedirs(directory, exist_ok=True)
    bundle.save_arrays(directory, {"centroids": pooling.centroids,
                                   "counts": np.asarray(counts, dtype=np.float64)})
    bundle.write_manifest(directory, {"kind": "pooling", "centroids": pooling.K,
                                      "units": pooling.D, "training_seed": pooling.training_seed})


def load_pooling(directory):
    """Pooling bundle (or a codebook bundle that carries one): ``(Codebook, counts)``."""
    man = bundle.read_manifest(directory)
    if man.get("kind") == "pooling":
        return Codebook(bundle.load_array(directory, "centroids")), bundle.load_array(directory, "counts")
    if man.get("kind") == "codebook" and man.get("pooling") == "yes":
        counts = None
        if os.path.isfile(os.path.join(directory, "pooling_counts.vtb")):
            counts = bundle.load_array(directory, "pooling_counts")
        return Codebook(bundle.load_array(directory, "pooling_centroids")), counts
    raise bundle.BundleError(f"{directory}: holds no pooling layer")
