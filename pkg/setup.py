import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

install_requires = [
    "numpy >= 1.17",
    "scipy >= 1.4",
    "pandas >= 1.0",
    "scikit-learn >= 0.22.1",
    "pyyaml",
    "joblib",
]

setuptools.setup(
    name="metapatch",
    version="0.1.0",
    author="metapatch developers",
    description="Inverse design of re-entrant sinusoidal auxetic patches with neural network surrogates",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=['examples', 'examples.*']),
    install_requires=install_requires,
    test_suite='pytest.collector',
    tests_require=['pytest'],
    entry_points = {
        'console_scripts': ['metapatch=metapatch.main:main'],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    python_requires='>=3.7',
)
