from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="ballfield",
    version="0.1.0",
    author="",
    author_email="",
    description="A CLI tool for simulating Gaussian random fields in the unit ball",
    long_description=long_description,
    long_description_content_type="text/markdown",
    url="",
    packages=find_packages(exclude=["tests", "tests.*"]),
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.10",
    install_requires=[
        "python-dotenv>=1.0.0",
        "click>=8.1.3",
        "rich>=13.3.5",
        "pyyaml>=6.0.1",
        "tenacity>=8.2.2",
        "numpy>=1.24",
        "scipy>=1.10",
        "matplotlib>=3.7",
    ],
    entry_points={
        "console_scripts": [
            "ballfield=ballfield.__main__:main",
        ],
    },
)
