import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

if __name__ == "__main__":
    setuptools.setup(
        name="neumannlab",
        version="0.1.0",
        license='BSD 3-Clause',
        description="Radial nonlinear Neumann problems: Dirichlet solver, mismatch scans and threshold radius estimates",
        long_description=long_description,
        long_description_content_type="text/markdown",
        packages=setuptools.find_packages(exclude=["tests", "examples", "examples.*"]),
        include_package_data=True,
        classifiers=[
            "Programming Language :: Python :: 3",
            "License :: OSI Approved :: BSD License",
            "Operating System :: OS Independent",
        ],
        python_requires='>=3.7',
        install_requires=[
            "fire",
            "numpy==1.22.3",
            "scipy==1.8.0",
            "tqdm==4.64.0",
            "pandas==1.4.2",
            "rich_logger==0.1.4",
            "parse==1.19.0",
        ],
        extras_require={
            "test": ["pytest"],
        },
        entry_points={
            "console_scripts": ["neumannlab=neumannlab.cli:main"],
        },
    )
