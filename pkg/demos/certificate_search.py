"""Certificates for h(t) = C0/(1+t) and their margins.

For each (C0, Lambda, lambda0) the search returns the largest admissible
polynomial rate k* together with the exponents (m, a), ell, eps and the
coupling radius R; every inequality is then re-checked from scratch.
"""

from sevastyanov.certificate import InfeasibleCertificate, revalidate, search_certificate

for C0, Lam, lam0 in [(10, 1, 0.5), (10, 0.5, 0.5), (20, 1, 2.0), (6.5, 0.3, 0.5), (6.0, 1.0, 0.5)]:
    try:
        cert = search_certificate(C0, Lam, lam0)
    except InfeasibleCertificate as e:
        print(f"C0={C0} Lambda={Lam} lambda0={lam0}: infeasible ({e})")
        continue
    rv = revalidate(cert)
    print(f"C0={C0} Lambda={Lam} lambda0={lam0}: k*={cert.k:.4f} m={cert.m:.4f} a={cert.a:.4f} "
          f"ell={cert.ell:.4f} R={cert.R:.4g} re-validated={rv['passed']}")
    print("  " + cert.margin_table().replace("\n", "\n  "))
