import os

from setuptools import Extension, setup

def _simd_flags():
    try:
        with open("/proc/cpuinfo") as fh:
            info = fh.read()
    except OSError:
        return [], []
    if " avx2" in info and " fma" in info:
        return ["-ffast-math", "-mavx2", "-mfma"], ["mvec", "m"]
    return [], ["m"]


ext_modules = []
if os.environ.get("TAGCAST_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        cflags, libs = _simd_flags()
        ext_modules = cythonize(
            [Extension("tagcast._ckernels", ["src/tagcast/_ckernels.pyx"],
                       include_dirs=[np.get_include()],
                       define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                       extra_compile_args=["-O3", *cflags],
                       libraries=libs)],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
