"""Scikit-learn front end.

`GaussianFusionAdapter` is a stateless transformer that blends each
image with its Gaussian low-pass reconstruction. `PromptTunedClassifier`
wraps the whole few-shot pipeline (backbone warm-up, zero-shot teacher,
two-stage prompt tuning) behind fit/predict, with every knob a flat
constructor parameter so grid search and cloning work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import encoders as E
from . import head as H
from . import metrics as M
from . import trainer as TR
from .data import Example
from .fusion import AdapterConfig, adapt
from .validation import as_image_batch, check_images_and_labels


class GaussianFusionAdapter(TransformerMixin, BaseEstimator):
    """Frequency-domain smoothing blended into the original image.

    Stateless: fit only validates. transform keeps the input layout,
    flat rows come back as flat rows, batches as batches.
    """

    def __init__(self, sigma=0.05, alpha=0.9, normalize_peak=True,
                 image_side=32, channels=3):
        self.sigma = sigma
        self.alpha = alpha
        self.normalize_peak = normalize_peak
        self.image_side = image_side
        self.channels = channels

    def _config(self) -> AdapterConfig:
        return AdapterConfig(sigma=self.sigma, alpha=self.alpha,
                             normalize_peak=self.normalize_peak)

    def fit(self, X, y=None):
        self._config()  # nothing is learned, parameters just get checked
        _, was_flat = as_image_batch(X, self.image_side, self.channels)
        if was_flat:
            self.n_features_in_ = self.image_side ** 2 * self.channels
        self.is_fitted_ = True
        return self

    def transform(self, X):
        check_is_fitted(self, "is_fitted_")
        imgs, was_flat = as_image_batch(X, self.image_side, self.channels)
        cfg = self._config()
        out = np.stack([adapt(im, cfg) for im in imgs])
        return out.reshape(len(out), -1) if was_flat else out


class PromptTunedClassifier(ClassifierMixin, BaseEstimator):
    """Few-shot image classifier over a frozen dual encoder.

    fit renders each class name into a text query, warms the random
    backbone briefly, caches a zero-shot teacher, then tunes language
    and vision prompt vectors in two stages. Only the prompts (and the
    warm-up projections) ever move; everything downstream of fit is a
    cosine readout against the class text features.

    `class_names` optionally maps the sorted unique labels to the text
    the encoder should see; by default the labels themselves are used,
    so string labels like "red dots" work out of the box.
    """

    def __init__(self, prompt_length=2, lambda_d=0.5, lambda_g=0.3,
                 learning_rate=0.05, epochs_stage1_lang=8,
                 epochs_stage1_vis=8, epochs_stage2=4, batch_size=8,
                 seed=0, mode="both", sigma=0.05, alpha=0.9, tau=0.1,
                 warm_steps=120, warm_learning_rate=0.5, backbone_seed=7,
                 class_names=None):
        self.prompt_length = prompt_length
        self.lambda_d = lambda_d
        self.lambda_g = lambda_g
        self.learning_rate = learning_rate
        self.epochs_stage1_lang = epochs_stage1_lang
        self.epochs_stage1_vis = epochs_stage1_vis
        self.epochs_stage2 = epochs_stage2
        self.batch_size = batch_size
        self.seed = seed
        self.mode = mode
        self.sigma = sigma
        self.alpha = alpha
        self.tau = tau
        self.warm_steps = warm_steps
        self.warm_learning_rate = warm_learning_rate
        self.backbone_seed = backbone_seed
        self.class_names = class_names

    def fit(self, X, y):
        cfg = E.desk_preset(tau=self.tau)
        imgs, y, was_flat = check_images_and_labels(
            X, y, cfg.image_side, cfg.channels)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError(
                f"need at least 2 classes, got {len(self.classes_)}")
        if self.class_names is not None:
            if len(self.class_names) != len(self.classes_):
                raise ValueError(
                    f"class_names has {len(self.class_names)} entries for"
                    f" {len(self.classes_)} observed classes")
            names = [str(n) for n in self.class_names]
        else:
            names = [str(c) for c in self.classes_]

        tcfg = TR.TrainConfig(
            mode=self.mode, lambda_d=self.lambda_d, lambda_g=self.lambda_g,
            learning_rate=self.learning_rate,
            epochs_stage1_lang=self.epochs_stage1_lang,
            epochs_stage1_vis=self.epochs_stage1_vis,
            epochs_stage2=self.epochs_stage2, batch_size=self.batch_size,
            prompt_length=self.prompt_length, seed=self.seed)
        wcfg = TR.WarmConfig(
            backbone_seed=self.backbone_seed, steps=self.warm_steps,
            learning_rate=self.warm_learning_rate,
            batch_size=self.batch_size)
        adapter = AdapterConfig(sigma=self.sigma, alpha=self.alpha)

        ids = np.searchsorted(self.classes_, y)
        examples = [Example(image=img, label=int(i), class_name=names[i])
                    for img, i in zip(imgs, ids)]
        weights = E.init_weights(cfg, E.build_vocab(names),
                                 seed=self.backbone_seed)
        TR.warm_backbone(weights, cfg, names, examples, wcfg)
        teacher = TR.TeacherCache(weights, cfg, names, "raw")
        teacher.warm(examples)
        prompts = E.init_prompts(cfg, self.seed, "random_gauss",
                                 m=self.prompt_length, weights=weights)
        state = TR.RunState()
        TR.train_stage1(weights, cfg, prompts, examples, names, teacher,
                        tcfg, adapter, state)
        if tcfg.epochs_stage2 > 0:
            TR.train_stage2(weights, cfg, prompts, examples, names, tcfg,
                            adapter, state)

        self.cfg_ = cfg
        self.weights_ = weights
        self.prompts_ = prompts
        self.adapter_ = adapter
        self.class_names_ = names
        self.state_ = state
        if was_flat:
            self.n_features_in_ = cfg.image_side ** 2 * cfg.channels
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "classes_")
        imgs, _ = as_image_batch(X, self.cfg_.image_side, self.cfg_.channels)
        z = M.class_features(self.weights_, self.cfg_, self.class_names_,
                             self.prompts_)
        rows = []
        for img in imgs:
            f = E.encode_image(self.weights_, self.cfg_, img,
                               prompts=self.prompts_, adapter=self.adapter_)
            rows.append(H.predict(H.similarity(z, f), self.cfg_.tau).probs)
        return np.vstack(rows)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]
