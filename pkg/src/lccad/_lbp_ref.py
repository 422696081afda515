"""Pure-numpy max-product message passing kernel.

Reference implementation of the loop the compiled extension
(lccad._lbp_fast) accelerates.  Both kernels perform the identical
sequence of floating point operations, so their outputs match bit for
bit; the parity test in tests/test_inference.py pins that.

Message layout: directed edge e in [0, m) keeps the stored edge
orientation (src = e1, dst = e2) and scores state pairs with
edge_pot[t_src, s_dst]; edge e in [m, 2m) is the reversal and uses the
transposed table.  The reverse of directed edge e is (e + m) mod 2m.
"""

from __future__ import annotations

import numpy as np

__all__ = ["run_max_product"]


def run_max_product(node_pot, edge_pot, src, dst, max_iters, damping, tol, normalize):
    """Synchronous flooding max-product updates with damping.

    Parameters
    ----------
    node_pot : (n, K) float64
    edge_pot : (K, K) float64
    src, dst : (2m,) int32 directed edge arrays, reverse of e is e +- m
    max_iters : int, sweep cap
    damping : float in [0, 1), new = damping*old + (1 - damping)*update
    tol : float, convergence threshold on the max absolute message change
    normalize : bool, subtract each message's max after every update

    Returns
    -------
    (messages (2m, K), beliefs (n, K), iterations, converged)
    """
    node_pot = np.ascontiguousarray(node_pot, dtype=np.float64)
    edge_pot = np.ascontiguousarray(edge_pot, dtype=np.float64)
    n, num_states = node_pot.shape
    two_m = src.shape[0]
    m = two_m // 2
    pot_fwd = edge_pot
    pot_bwd = np.ascontiguousarray(edge_pot.T)

    messages = np.zeros((two_m, num_states))
    iterations = 0
    converged = False
    for _ in range(max_iters):
        incoming = np.zeros((n, num_states))
        np.add.at(incoming, dst, messages)
        # Sum over N(src) \ {dst} = all incoming at src minus the reverse message.
        base = (node_pot[src] + incoming[src]) - np.concatenate(
            [messages[m:], messages[:m]], axis=0
        )
        raw = np.empty_like(messages)
        raw[:m] = (base[:m, :, None] + pot_fwd[None, :, :]).max(axis=1)
        raw[m:] = (base[m:, :, None] + pot_bwd[None, :, :]).max(axis=1)
        updated = damping * messages + (1.0 - damping) * raw
        if normalize:
            updated = updated - updated.max(axis=1, keepdims=True)
        delta = np.abs(updated - messages).max() if two_m else 0.0
        messages = updated
        iterations += 1
        if delta < tol:
            converged = True
            break

    incoming = np.zeros((n, num_states))
    np.add.at(incoming, dst, messages)
    beliefs = node_pot + incoming
    return messages, beliefs, iterations, converged
