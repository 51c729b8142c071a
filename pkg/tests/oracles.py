"""Brute-force reference implementations shared by unit and acceptance tests."""
import itertools

import numpy as np


def block_masses(P, pattern):
    mods = pattern.slot_modalities
    M = pattern.M
    S = np.zeros((M, M))
    for i in range(P.shape[0]):
        for j in range(P.shape[1]):
            S[mods[i], mods[j]] += P[i, j]
    return S


def exhaustive_ilp(C, pattern, k):
    """Cheapest permutation matrix whose off-diagonal block masses stay within ``k``."""
    L = C.shape[0]
    mods = pattern.slot_modalities
    best, best_val = None, np.inf
    for perm in itertools.permutations(range(L)):
        counts = {}
        for i, j in enumerate(perm):
            if mods[i] != mods[j]:
                counts[(mods[i], mods[j])] = counts.get((mods[i], mods[j]), 0) + 1
        if any(v > k + 1e-9 for v in counts.values()):
            continue
        val = sum(C[i, j] for i, j in enumerate(perm))
        if val < best_val - 1e-12:
            best, best_val = perm, val
    P = np.zeros((L, L))
    P[np.arange(L), best] = 1
    return P, best_val


def exhaustive_max_assignment(W):
    n = W.shape[0]
    best, best_val = None, -np.inf
    for perm in itertools.permutations(range(n)):
        val = sum(W[i, perm[i]] for i in range(n))
        if val > best_val:
            best, best_val = perm, val
    return list(best), best_val


def has_cycle(a):
    a = np.abs(np.asarray(a)) > 0
    n = a.shape[0]
    reach = a.astype(int)
    for _ in range(n):
        reach = ((reach + reach @ a.astype(int)) > 0).astype(int)
    return bool(np.any(np.diag(reach)))
