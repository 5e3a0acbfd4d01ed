from setuptools import find_packages, setup

from haarboost import __version__


setup(
    name="haarboost",
    version=__version__,
    description="Parallel and distributed AdaBoost training of Haar "
                "feature stumps",
    packages=find_packages(exclude=["tests"]),
    python_requires=">=3.8",
    install_requires=[
        "numpy",
        "Pillow>=9.3",
        "psutil",
    ],
    entry_points={
        "console_scripts": ["haarboost = haarboost.cli:main"],
    },
    zip_safe=False,
)
