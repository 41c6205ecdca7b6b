"""Entry point: caps BLAS/OpenMP threads from ``--threads`` before numpy is imported."""
import os
import sys


def _thread_cap(argv) -> str:
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--threads="):
            return a.split("=", 1)[1]
    return "1"


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    n = _thread_cap(argv)
    if n.isdigit() and int(n) > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = n
    from .cli import run
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
