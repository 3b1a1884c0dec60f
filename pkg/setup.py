from posetrack import __version__
import setuptools

with open("README.md", "r", encoding='utf8') as fh:
    long_description = fh.read()

setuptools.setup(
    name="posetrack",
    version=__version__,
    author="posetrack developers",
    description="Model-free 6-DoF object tracking from images only",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(),
    python_requires="~=3.9",
    install_requires=['altair>=5.0', 'matplotlib>=3.5', 'numpy>=1.22',
                      'pandas>=1.4', 'Pillow>=9.0', 'scipy>=1.8',
                      'torch>=2.0'],
    entry_points={
        "console_scripts": ["posetrack=posetrack.cli:main"],
    },
    classifiers=(
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ),
)
