import os
import subprocess
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    """Delegates the _core extension build to the repository's CMake tree."""

    def build_extension(self, ext):
        extdir = os.path.abspath(os.path.dirname(self.get_ext_fullpath(ext.name)))
        build_temp = os.path.join(self.build_temp, "cmake")
        os.makedirs(build_temp, exist_ok=True)
        source_dir = os.path.abspath(os.path.dirname(__file__))
        cmake_args = [
            "-DMIB_BUILD_PYTHON=ON",
            "-DCMAKE_BUILD_TYPE=Release",
            f"-DCMAKE_LIBRARY_OUTPUT_DIRECTORY={extdir}",
            f"-DPython_EXECUTABLE={sys.executable}",
        ]
        try:
            cmakedir = subprocess.check_output(
                [sys.executable, "-m", "pybind11", "--cmakedir"], text=True
            ).strip()
            cmake_args.append(f"-Dpybind11_DIR={cmakedir}")
        except (subprocess.CalledProcessError, FileNotFoundError):
            pass  # fall back to a system-wide pybind11 config
        subprocess.run(["cmake", source_dir, *cmake_args], cwd=build_temp, check=True)
        subprocess.run(
            ["cmake", "--build", ".", "--target", "_core", "--parallel"],
            cwd=build_temp,
            check=True,
        )


setup(
    ext_modules=[CMakeExtension("mibounds._core")],
    cmdclass={"build_ext": CMakeBuild},
)
