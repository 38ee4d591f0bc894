from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the package falls back at import
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("themegen._kernels._ckernels", ["src/themegen/_kernels/_ckernels.pyx"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
