"""
Independent reference implementations used to validate the package.

Everything here is written from first principles with plain numpy (explicit
loops, permutation matrices, Kraus sums) and deliberately avoids the
package's own linear-algebra helpers, so agreement between the two is a
meaningful check rather than a tautology.
"""

import numpy as np


def cswap_matrix() -> np.ndarray:
    """Permutation matrix: exchange qubits 2 and 3 when qubit 1 is |1>."""
    m = np.zeros((8, 8), dtype=complex)
    for b in range(8):
        q1, q2, q3 = (b >> 2) & 1, (b >> 1) & 1, b & 1
        t = (q1 << 2) | (q3 << 1) | q2 if q1 else b
        m[t, b] = 1.0
    return m


def swap_qubits_23() -> np.ndarray:
    """Permutation matrix swapping qubits 2 and 3 of a 3-qubit register."""
    m = np.zeros((8, 8), dtype=complex)
    for b in range(8):
        q1, q2, q3 = (b >> 2) & 1, (b >> 1) & 1, b & 1
        m[(q1 << 2) | (q3 << 1) | q2, b] = 1.0
    return m


def protocol_reference(nu, phi1, phi2, chi):
    """
    Run the full circuit by brute force: 8-dim state, explicit projector
    matrices, sequential measurement with renormalization.  Returns the
    normalized qubit-2 output amplitudes and the joint success probability.
    """
    nu, phi1, phi2, chi = (np.asarray(v, dtype=complex) for v in (nu, phi1, phi2, chi))
    psi = np.kron(nu, np.kron(phi1, phi2))
    psi = cswap_matrix() @ psi

    proj3 = np.kron(np.eye(4), np.outer(chi, chi.conj()))
    psi = proj3 @ psi
    p3 = float(np.vdot(psi, psi).real)
    if p3 <= 0:
        return None, 0.0
    psi = psi / np.sqrt(p3)

    o1 = abs(np.vdot(phi1, chi))
    o2 = abs(np.vdot(phi2, chi))
    mu = np.array([o1, o2], dtype=complex)
    mu = mu / np.linalg.norm(mu)
    proj1 = np.kron(np.outer(mu, mu.conj()), np.eye(4))
    psi = proj1 @ psi
    p1 = float(np.vdot(psi, psi).real)
    if p1 <= 0:
        return None, 0.0
    psi = psi / np.sqrt(p1)

    full = psi.reshape(2, 2, 2)
    out = np.einsum("i,ijk,k->j", mu.conj(), full, chi.conj())
    return out / np.linalg.norm(out), p3 * p1


def analytic_reference(alpha, beta, phi1, phi2, chi):
    """The closed-form output: alpha e^{i arg<chi|phi2>} phi1 + beta e^{i arg<chi|phi1>} phi2."""
    o1 = np.vdot(chi, phi1)
    o2 = np.vdot(chi, phi2)
    out = alpha * (o2 / abs(o2)) * np.asarray(phi1) + beta * (o1 / abs(o1)) * np.asarray(phi2)
    return out / np.linalg.norm(out)


def random_task_arrays(rng, min_overlap=0.05):
    """(nu, phi1, phi2, chi) Haar-ish random with both |<phi_i|chi>| >= min_overlap."""

    def rand_ket():
        v = rng.normal(size=2) + 1j * rng.normal(size=2)
        return v / np.linalg.norm(v)

    while True:
        nu, phi1, phi2, chi = rand_ket(), rand_ket(), rand_ket(), rand_ket()
        if abs(np.vdot(phi1, chi)) >= min_overlap and abs(np.vdot(phi2, chi)) >= min_overlap:
            return nu, phi1, phi2, chi


def apply_kraus(rho, kraus_ops):
    return sum(k @ rho @ k.conj().T for k in kraus_ops)


def kron_all(mats):
    out = np.array([[1.0 + 0j]])
    for m in mats:
        out = np.kron(out, m)
    return out


def partial_trace_reference(rho, n, keep):
    """Index-loop partial trace over all qubits not in ``keep`` (1-based)."""
    keep = list(keep)
    drop = [q for q in range(1, n + 1) if q not in keep]
    k = len(keep)
    out = np.zeros((2**k, 2**k), dtype=complex)
    for a in range(2**n):
        for b in range(2**n):
            abits = [(a >> (n - q)) & 1 for q in range(1, n + 1)]
            bbits = [(b >> (n - q)) & 1 for q in range(1, n + 1)]
            if any(abits[q - 1] != bbits[q - 1] for q in drop):
                continue
            ia = sum(abits[q - 1] << (k - 1 - i) for i, q in enumerate(keep))
            ib = sum(bbits[q - 1] << (k - 1 - i) for i, q in enumerate(keep))
            out[ia, ib] += rho[a, b]
    return out


def spearman(x, y):
    """Rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)

    def ranks(a):
        order = np.argsort(a, kind="stable")
        r = np.empty(len(a))
        r[order] = np.arange(len(a), dtype=float)
        for v in np.unique(a):
            idx = np.where(a == v)[0]
            if len(idx) > 1:
                r[idx] = r[idx].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float(np.sum(rx * ry) / np.sqrt(np.sum(rx**2) * np.sum(ry**2)))
