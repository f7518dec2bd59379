"""Hot numeric kernels: pairwise IoU, weighted-box clustering, greedy matching.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback.
The numba path is used when numba imports and ``CTXFUSE_DISABLE_NUMBA`` is
unset or ``0``. Both paths follow the same arithmetic order so results agree
to rounding.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _env_disabled() -> bool:
    return os.environ.get("CTXFUSE_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not _env_disabled()


# --- numpy -------------------------------------------------------------------


def iou_matrix_numpy(a, b):
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.maximum(0.0, ix2 - ix1) * np.maximum(0.0, iy2 - iy1)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def wbf_cluster_numpy(boxes, scores, labels, iou_thr):
    # inputs pre-sorted by (label, -score, coords); clusters never cross labels
    n = len(scores)
    fused = np.zeros((n, 4))
    wsum = np.zeros((n, 4))
    psum = np.zeros((n, 4))
    sw = np.zeros(n)
    count = np.zeros(n, np.int64)
    out_labels = np.zeros(n, np.int64)
    k = 0
    start = 0
    for i in range(n):
        if i > 0 and labels[i] != labels[i - 1]:
            start = k
        best, best_iou = -1, iou_thr
        if k > start:
            ious = iou_matrix_numpy(boxes[i : i + 1], fused[start:k])[0]
            j = int(np.argmax(ious))
            if ious[j] > best_iou:
                best = start + j
        if best < 0:
            best = k
            out_labels[k] = labels[i]
            k += 1
        s = scores[i]
        wsum[best] += s * boxes[i]
        psum[best] += boxes[i]
        sw[best] += s
        count[best] += 1
        if count[best] == 1:
            fused[best] = boxes[i]
        elif sw[best] > 0:
            fused[best] = wsum[best] / sw[best]
        else:
            fused[best] = psum[best] / count[best]
    return fused[:k], sw[:k], count[:k], out_labels[:k]


def greedy_match_numpy(pred_boxes, pred_labels, gt_boxes, gt_labels, iou_thr):
    n, m = len(pred_labels), len(gt_labels)
    if n == 0 or m == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    ious = iou_matrix_numpy(pred_boxes, gt_boxes)
    ok = (ious >= iou_thr) & (pred_labels[:, None] == gt_labels[None, :])
    pi, gj = np.nonzero(ok)  # row-major, i.e. (i, j) order
    order = np.argsort(-ious[pi, gj], kind="stable")
    used_p = np.zeros(n, np.bool_)
    used_g = np.zeros(m, np.bool_)
    mp, mg = [], []
    for idx in order:
        i, j = pi[idx], gj[idx]
        if used_p[i] or used_g[j]:
            continue
        used_p[i] = used_g[j] = True
        mp.append(i)
        mg.append(j)
    return np.asarray(mp, np.int64), np.asarray(mg, np.int64)


# --- numba -------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _iou_pair(a0, a1, a2, a3, b0, b1, b2, b3):
        iw = max(0.0, min(a2, b2) - max(a0, b0))
        ih = max(0.0, min(a3, b3) - max(a1, b1))
        inter = iw * ih
        union = (a2 - a0) * (a3 - a1) + (b2 - b0) * (b3 - b1) - inter
        if union > 0:
            return inter / union
        return 0.0

    @njit(cache=True)
    def iou_matrix_numba(a, b):
        out = np.zeros((a.shape[0], b.shape[0]))
        for i in range(a.shape[0]):
            for j in range(b.shape[0]):
                out[i, j] = _iou_pair(a[i, 0], a[i, 1], a[i, 2], a[i, 3], b[j, 0], b[j, 1], b[j, 2], b[j, 3])
        return out

    @njit(cache=True)
    def wbf_cluster_numba(boxes, scores, labels, iou_thr):
        n = scores.shape[0]
        fused = np.zeros((n, 4))
        wsum = np.zeros((n, 4))
        psum = np.zeros((n, 4))
        sw = np.zeros(n)
        count = np.zeros(n, np.int64)
        out_labels = np.zeros(n, np.int64)
        k = 0
        start = 0
        for i in range(n):
            if i > 0 and labels[i] != labels[i - 1]:
                start = k
            best = -1
            best_iou = -1.0
            for c in range(start, k):
                v = _iou_pair(
                    boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3],
                    fused[c, 0], fused[c, 1], fused[c, 2], fused[c, 3],
                )
                if v > best_iou:
                    best_iou = v
                    best = c
            if best < 0 or not best_iou > iou_thr:
                best = k
                out_labels[k] = labels[i]
                k += 1
            s = scores[i]
            for d in range(4):
                wsum[best, d] += s * boxes[i, d]
                psum[best, d] += boxes[i, d]
            sw[best] += s
            count[best] += 1
            for d in range(4):
                if count[best] == 1:
                    fused[best, d] = boxes[i, d]
                elif sw[best] > 0:
                    fused[best, d] = wsum[best, d] / sw[best]
                else:
                    fused[best, d] = psum[best, d] / count[best]
        return fused[:k].copy(), sw[:k].copy(), count[:k].copy(), out_labels[:k].copy()

    @njit(cache=True)
    def greedy_match_numba(pred_boxes, pred_labels, gt_boxes, gt_labels, iou_thr):
        n = pred_labels.shape[0]
        m = gt_labels.shape[0]
        cap = n * m
        pi = np.empty(cap, np.int64)
        gj = np.empty(cap, np.int64)
        neg = np.empty(cap)
        c = 0
        for i in range(n):
            for j in range(m):
                if pred_labels[i] != gt_labels[j]:
                    continue
                v = _iou_pair(
                    pred_boxes[i, 0], pred_boxes[i, 1], pred_boxes[i, 2], pred_boxes[i, 3],
                    gt_boxes[j, 0], gt_boxes[j, 1], gt_boxes[j, 2], gt_boxes[j, 3],
                )
                if v >= iou_thr:
                    pi[c] = i
                    gj[c] = j
                    neg[c] = -v
                    c += 1
        order = np.argsort(neg[:c], kind="mergesort")
        used_p = np.zeros(n, np.bool_)
        used_g = np.zeros(m, np.bool_)
        mp = np.empty(min(n, m), np.int64)
        mg = np.empty(min(n, m), np.int64)
        r = 0
        for idx in order:
            i = pi[idx]
            j = gj[idx]
            if used_p[i] or used_g[j]:
                continue
            used_p[i] = True
            used_g[j] = True
            mp[r] = i
            mg[r] = j
            r += 1
        return mp[:r].copy(), mg[:r].copy()


    @njit(cache=True)
    def _before(a, b, conf, boxes, labels):
        # output order: -conf, x1, y1, x2, y2, label
        if conf[a] != conf[b]:
            return conf[a] > conf[b]
        for d in range(4):
            if boxes[a, d] != boxes[b, d]:
                return boxes[a, d] < boxes[b, d]
        return labels[a] < labels[b]

    @njit(cache=True)
    def config_losses_numba(
        boxes, scores, labels, branch_idx, masks, gt_boxes, gt_labels,
        iou_thr, conf_floor, weighted_mode, match_iou, miss_penalty, fp_factor, min_conf,
    ):
        n_cfg = masks.shape[0]
        n = scores.shape[0]
        m = gt_labels.shape[0]
        out = np.empty(n_cfg)
        sel = np.empty(n, np.int64)
        for c in range(n_cfg):
            n_models = 0
            for b in range(masks.shape[1]):
                if masks[c, b]:
                    n_models += 1
            r = 0
            for i in range(n):
                if masks[c, branch_idx[i]]:
                    sel[r] = i
                    r += 1
            idx = sel[:r]
            fused, sw, count, flab = wbf_cluster_numba(boxes[idx], scores[idx], labels[idx], iou_thr)
            k = sw.shape[0]
            conf = sw / count
            if weighted_mode:
                for j in range(k):
                    conf[j] = conf[j] * min(count[j], n_models) / n_models
            keep = np.empty(k, np.int64)
            q = 0
            for j in range(k):
                if conf[j] >= conf_floor:
                    keep[q] = j
                    q += 1
            order = keep[:q].copy()
            for a in range(1, q):
                cur = order[a]
                z = a - 1
                while z >= 0 and _before(cur, order[z], conf, fused, flab):
                    order[z + 1] = order[z]
                    z -= 1
                order[z + 1] = cur
            pb = fused[order]
            pc = conf[order]
            pl = flab[order]
            mp, mg = greedy_match_numba(pb, pl, gt_boxes, gt_labels, match_iou)
            nm = mp.shape[0]
            cls = 0.0
            loc = 0.0
            if nm > 0:
                acc = 0.0
                lacc = 0.0
                for u in range(nm):
                    acc += -np.log(max(pc[mp[u]], min_conf))
                    g = gt_boxes[mg[u]]
                    w = g[2] - g[0]
                    h = g[3] - g[1]
                    row = 0.0
                    for d in range(4):
                        size = w if d % 2 == 0 else h
                        x = (pb[mp[u], d] - g[d]) / size
                        ax = abs(x)
                        row += 0.5 * x * x if ax < 1.0 else ax - 0.5
                    lacc += row
                cls = acc / nm
                loc = lacc / nm
            cls += miss_penalty * (m - nm)
            if q > nm:
                used = np.zeros(q, np.bool_)
                for u in range(nm):
                    used[mp[u]] = True
                fp = 0.0
                for j in range(q):
                    if not used[j]:
                        fp += pc[j]
                cls += fp_factor * fp
            out[c] = cls + loc
        return out


def _select(use_numba: bool | None = None):
    use = USE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    if use:
        return iou_matrix_numba, wbf_cluster_numba, greedy_match_numba
    return iou_matrix_numpy, wbf_cluster_numpy, greedy_match_numpy


def iou_matrix(a, b, use_numba: bool | None = None):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    return _select(use_numba)[0](a, b)


def wbf_cluster(boxes, scores, labels, iou_thr: float, use_numba: bool | None = None):
    return _select(use_numba)[1](boxes, scores, labels, float(iou_thr))


def greedy_match(pred_boxes, pred_labels, gt_boxes, gt_labels, iou_thr: float, use_numba: bool | None = None):
    return _select(use_numba)[2](pred_boxes, pred_labels, gt_boxes, gt_labels, float(iou_thr))


def config_losses(packed, masks, gt_boxes, gt_labels, fusion, loss):
    boxes, scores, labels, branch_idx = packed
    return config_losses_numba(
        boxes, scores, labels, branch_idx, masks, gt_boxes, gt_labels,
        float(fusion.iou_threshold), float(fusion.confidence_floor), fusion.cluster_conf_mode == "weighted",
        float(loss.match_iou), float(loss.miss_penalty), float(loss.false_positive_factor), float(loss.min_confidence),
    )
