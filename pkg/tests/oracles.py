"""Independent numpy-only reference computations used to pin semantics.

Everything here is deliberately written from first principles (homogeneous
matrices, complex-step differentiation, Euler-Lagrange mechanics) without
touching the package's jax implementations, so tests compare two unrelated
code paths.
"""

import numpy as np

CS_H = 1e-100  # complex-step size; no subtractive cancellation, exact to eps


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=complex if np.iscomplexobj(a) else float)


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=complex if np.iscomplexobj(a) else float)


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=complex if np.iscomplexobj(a) else float)


def euler_xyz(psi):
    return rot_x(psi[0]) @ rot_y(psi[1]) @ rot_z(psi[2])


def homogeneous(r, t):
    h = np.zeros((4, 4), dtype=np.result_type(r, t, float))
    h[:3, :3] = r
    h[:3, 3] = t
    h[3, 3] = 1.0
    return h


def chain_frames(q_b, q_prb, lengths):
    """World poses of every body frame plus the tip, via explicit 4x4
    homogeneous-matrix composition.  Complex-safe for complex-step use."""
    dt = np.result_type(q_b, q_prb, lengths, float)
    t = homogeneous(euler_xyz(q_b[3:6]), np.asarray(q_b[:3], dtype=dt))
    frames = [t]
    n_ej = len(lengths) - 1
    for j in range(n_ej):
        trans = homogeneous(np.eye(3), np.array([lengths[j], 0, 0], dtype=dt))
        rot = homogeneous(rot_y(q_prb[2 * j]) @ rot_z(q_prb[2 * j + 1]),
                          np.zeros(3, dtype=dt))
        t = t @ trans @ rot
        frames.append(t)
    tip = t @ homogeneous(np.eye(3), np.array([lengths[-1], 0, 0], dtype=dt))
    return frames, tip


def fk_oracle(q_b, q_prb, lengths):
    """Free-end position by homogeneous-matrix composition."""
    _, tip = chain_frames(q_b, q_prb, lengths)
    return np.real(tip[:3, 3])


def _vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def body_twist_jacobians(q_b, q_prb, lengths):
    """Per-body maps from generalized rates [qd_prb; qd_b] to the body-frame
    twist [omega; v], built by complex-step differentiation of the frame
    chain (exact to machine precision)."""
    nq = len(q_prb)
    n_coord = nq + 6
    frames, _ = chain_frames(np.asarray(q_b, float), np.asarray(q_prb, float),
                             np.asarray(lengths, float))
    jacobians = [np.zeros((6, n_coord)) for _ in frames]
    for k in range(n_coord):
        dq = np.asarray(q_prb, complex).copy()
        db = np.asarray(q_b, complex).copy()
        if k < nq:
            dq[k] += 1j * CS_H
        else:
            db[k - nq] += 1j * CS_H
        pert, _ = chain_frames(db, dq, np.asarray(lengths, float))
        for i, (t0, t1) in enumerate(zip(frames, pert)):
            r0 = t0[:3, :3].real
            rdot = t1[:3, :3].imag / CS_H
            pdot = t1[:3, 3].imag / CS_H
            jacobians[i][:3, k] = _vee(r0.T @ rdot)
            jacobians[i][3:, k] = r0.T @ pdot
    return jacobians, frames


def generalized_mass(q_b, q_prb, lengths, inertia_blocks):
    """Mass matrix over [q_prb; q_b] from Sum J_i^T G_i J_i.

    ``inertia_blocks`` are the 6x6 body-frame spatial inertias (one per
    body, bodies 1..n_prb).
    """
    jacobians, _ = body_twist_jacobians(q_b, q_prb, lengths)
    n_coord = len(q_prb) + 6
    h = np.zeros((n_coord, n_coord))
    for jac, g in zip(jacobians, inertia_blocks):
        h += jac.T @ g @ jac
    return h


def gravity_gradient(q_b, q_prb, lengths, masses, coms, gravity):
    """d/dq of Sum m g z_com, by complex step on the joint angles."""
    nq = len(q_prb)
    grad = np.zeros(nq)
    for k in range(nq):
        dq = np.asarray(q_prb, complex).copy()
        dq[k] += 1j * CS_H
        frames, _ = chain_frames(np.asarray(q_b, complex), dq,
                                 np.asarray(lengths, float))
        z_imag = 0.0
        for frame, m, c in zip(frames, masses, coms):
            com_w = frame[:3, :3] @ np.asarray(c, complex) + frame[:3, 3]
            z_imag += m * gravity * com_w[2].imag
        grad[k] = z_imag / CS_H
    return grad


def lagrangian_qdd(q_prb, qd_prb, u, lengths, inertia_blocks, masses, coms,
                   q_applied, gravity=9.81, fd_step=1e-6):
    """Passive-joint accelerations from the Euler-Lagrange equations.

    The kinetic energy is the quadratic form of :func:`generalized_mass`
    over the stacked rates [qd_prb; qd_b]; configuration derivatives of the
    mass matrix use central finite differences of machine-precision
    entries.  ``q_applied`` is the generalized force on the passive joints.
    """
    q_prb = np.asarray(q_prb, float)
    qd_prb = np.asarray(qd_prb, float)
    u = np.asarray(u, float)
    q_b, qd_b, qdd_b = u[:6], u[6:12], u[12:18]
    nq = len(q_prb)
    rates = np.concatenate([qd_prb, qd_b])

    def mass_at(q, qb):
        return generalized_mass(qb, q, lengths, inertia_blocks)

    h = mass_at(q_prb, q_b)
    # dH/dq_k and dH/dqb_k by central differences
    dh_dq = []
    for k in range(nq):
        e = np.zeros(nq)
        e[k] = fd_step
        dh_dq.append((mass_at(q_prb + e, q_b) - mass_at(q_prb - e, q_b)) / (2 * fd_step))
    dh_db = []
    for k in range(6):
        e = np.zeros(6)
        e[k] = fd_step
        dh_db.append((mass_at(q_prb, q_b + e) - mass_at(q_prb, q_b - e)) / (2 * fd_step))

    # momentum of the passive coordinates: p = H[:nq, :] @ rates
    # d/dt p = H[:nq, :nq] qdd + H[:nq, nq:] qdd_b + (dH/dt)[:nq, :] rates
    dh_dt = sum(dh_dq[k] * qd_prb[k] for k in range(nq)) + \
        sum(dh_db[k] * qd_b[k] for k in range(6))
    coriolis = dh_dt[:nq, :] @ rates

    # dT/dq_k = 0.5 rates^T dH/dq_k rates
    dt_dq = np.array([0.5 * rates @ (dh_dq[k] @ rates) for k in range(nq)])
    dv_dq = gravity_gradient(q_b, q_prb, lengths, masses, coms, gravity)

    rhs = (np.asarray(q_applied, float) + dt_dq - dv_dq
           - h[:nq, nq:] @ qdd_b - coriolis)
    return np.linalg.solve(h[:nq, :nq], rhs)


def mlp_torque_scalar(k, c, w1, w2, b2, q, qd, b1=None):
    """Appendix-style residual network evaluated with explicit loops."""
    tau = [k[a] * q[a] + c[a] * qd[a] for a in range(2)]
    inp = [q[0], q[1], qd[0], qd[1]]
    hidden = []
    for row in range(w1.shape[0]):
        z = sum(w1[row, col] * inp[col] for col in range(4))
        if b1 is not None:
            z += b1[row]
        sig = 1.0 / (1.0 + np.exp(-z))
        hidden.append(z * sig + b2[row])
    out = []
    for row in range(2):
        out.append(tau[row] + sum(w2[row, col] * hidden[col]
                                  for col in range(w2.shape[1])))
    return np.array(out)
