from typing import List, Sequence

import numpy as np


def _check_models(models: Sequence):
    if not models:
        raise ValueError("An ensemble needs at least one model.")
    classes = {m.num_classes for m in models}
    if len(classes) != 1:
        raise ValueError(f"Models disagree on the number of classes: {sorted(classes)}")


def ensemble_predict(models: Sequence, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """
    Averages the softmax outputs of several models on a batch.

    Args:
        models: Objects exposing num_classes and predict_proba(x, batch_size).
        x: Input batch.
        batch_size: Chunk size for each model's forward passes.

    Returns:
        B x num_classes probabilities; each row sums to one.
    """
    _check_models(models)
    probs = [np.asarray(m.predict_proba(x, batch_size), dtype=np.float64) for m in models]
    return np.mean(probs, axis=0)


def ensemble_accuracies(models: Sequence, x: np.ndarray, y: np.ndarray, batch_size: int = 32) -> List[float]:
    """Accuracy of each model followed by the accuracy of their ensemble."""
    _check_models(models)
    probs = [np.asarray(m.predict_proba(x, batch_size), dtype=np.float64) for m in models]
    scores = [float(np.mean(np.argmax(p, axis=1) == y)) for p in probs]
    scores.append(float(np.mean(np.argmax(np.mean(probs, axis=0), axis=1) == y)))
    return scores
