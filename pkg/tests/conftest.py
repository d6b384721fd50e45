import os

# canonical single-threaded BLAS unless the caller set MFC_THREADS explicitly;
# must happen before numpy's first import
_threads = os.environ.get("MFC_THREADS", "0")
_n = "1" if _threads in ("", "0") else _threads
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _n)
