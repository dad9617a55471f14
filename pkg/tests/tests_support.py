"""Shared state between the acceptance tests and the terminal summary."""

ACCEPTANCE = {}


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok
