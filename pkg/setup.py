from distutils.core import setup

setup(
    name="costpy",
    version="0.0.1",
    description="Static communication cost profiler for secure ML programs",
    packages=["costpy"],
)
