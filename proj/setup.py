"""setuptools -> CMake bridge for the anchorstream extension.

The C++ core and the pybind11 module are built by the repository's main
CMake project; this shim drives that build from pip and drops the compiled
`_core` extension next to the pure-python package. Install with

    pip install . --no-build-isolation
"""

import pathlib
import subprocess
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

ROOT = pathlib.Path(__file__).resolve().parent


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        # get_ext_fullpath ends .../anchorstream/_core.<abi>.so, so its parent
        # is already the package directory inside build_lib
        out_dir = pathlib.Path(self.get_ext_fullpath(ext.name)).resolve().parent
        build_dir = pathlib.Path(self.build_temp).resolve() / "cmake"
        build_dir.mkdir(parents=True, exist_ok=True)

        configure = [
            "cmake",
            "-S",
            str(ROOT),
            "-B",
            str(build_dir),
            "-DCMAKE_BUILD_TYPE=Release",
            f"-DPython3_EXECUTABLE={sys.executable}",
            "-DANCHORSTREAM_PYTHON=ON",
            "-DANCHORSTREAM_TOOLS_AND_TESTS=OFF",
            f"-DANCHORSTREAM_EXT_INSTALL_DIR={out_dir}",
        ]
        subprocess.run(configure, check=True)
        subprocess.run(
            ["cmake", "--build", str(build_dir), "--target", "anchorstream_pymod", "-j"],
            check=True,
        )
        subprocess.run(
            ["cmake", "--install", str(build_dir)],
            check=True,
        )


setup(
    packages=["anchorstream"],
    package_dir={"anchorstream": "python/anchorstream"},
    ext_modules=[CMakeExtension("anchorstream._core")],
    cmdclass={"build_ext": CMakeBuild},
)
