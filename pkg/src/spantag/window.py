"""Overlapping-window inference for over-length documents.

Documents longer than the model's context are split into windows that start
every ``stride`` tokens; each window is predicted independently and every
token keeps the label from the window that gives it the most surrounding
context (ties go to the earliest window).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import head

DEFAULT_WINDOW = 8192


@dataclass(frozen=True)
class WindowPlan:
    windows: tuple  # ((start, end), ...) token ranges, end-exclusive
    owner: np.ndarray  # per token, index of the window whose label is kept
    window: int
    stride: int

    def __len__(self) -> int:
        return len(self.windows)


def context_score(t: int, window: tuple) -> int:
    """How much context a window gives token t: min distance to either edge."""
    s, e = window
    return min(t - s, e - 1 - t)


def plan_windows(n_tokens: int, window: int = DEFAULT_WINDOW,
                 stride: int | None = None) -> WindowPlan:
    """Choose window ranges over [0, n_tokens) and the owner of every token.

    Windows start at 0, stride, 2*stride, ...; the last one is right-aligned
    to end exactly at n_tokens so no window is shorter than the rest unless
    the document itself is.
    """
    if stride is None:
        stride = max(1, window // 2)
    if window < 1:
        raise ValueError("window must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride > window:
        raise ValueError("stride must not exceed window")
    if n_tokens < 0:
        raise ValueError("token count must be >= 0")

    windows = []
    s = 0
    while True:
        e = s + window
        if e >= n_tokens:
            windows.append((max(0, n_tokens - window), n_tokens))
            break
        windows.append((s, e))
        s += stride

    owner = np.full(n_tokens, -1, dtype=np.intp)
    best = np.full(n_tokens, -1, dtype=np.intp)
    for wi, (ws, we) in enumerate(windows):
        t = np.arange(ws, we)
        score = np.minimum(t - ws, we - 1 - t)
        take = score > best[ws:we]  # strict: ties stay with the earlier window
        best[ws:we][take] = score[take]
        owner[ws:we][take] = wi
    return WindowPlan(windows=tuple(windows), owner=owner,
                      window=window, stride=stride)


def reconcile(plan: WindowPlan, per_window_labels) -> list[str]:
    """Gather each token's label from its owner window."""
    if len(per_window_labels) != len(plan.windows):
        raise ValueError(f"{len(per_window_labels)} label sequences "
                         f"for {len(plan.windows)} windows")
    for (ws, we), labels in zip(plan.windows, per_window_labels):
        if len(labels) != we - ws:
            raise ValueError(f"window [{ws},{we}) expects {we - ws} labels, "
                             f"got {len(labels)}")
    return [per_window_labels[wi][t - plan.windows[wi][0]]
            for t, wi in enumerate(plan.owner)]


def predict_windowed(enc, params, window: int = DEFAULT_WINDOW,
                     stride: int | None = None) -> list[str]:
    """Predict labels for a document of any length via the window plan."""
    n = len(enc)
    if n == 0:
        return []
    plan = plan_windows(n, window, stride)
    if len(plan.windows) == 1:
        return head.predict(enc, params)
    per_window = [head.predict(enc.window(ws, we), params)
                  for ws, we in plan.windows]
    return reconcile(plan, per_window)
