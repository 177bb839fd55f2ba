from setuptools import find_packages, setup

with open("README.md", "r") as f:
    long_description = f.read()

setup(
    name="civicsim_modules",
    version="0.1.0",
    description="delegate and trustee voting experiments with language models",
    package_dir={"": "civicsim_app"},
    packages=find_packages(where="civicsim_app"),
    package_data={
        "civicsim_modules": [
            "data/*.json",
            "data/*.jsonl",
            "data/config/*.yaml",
            "data/prompts/*/*.txt",
        ],
    },
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3.9",
        "Operating System :: OS Independent",
    ],
    install_requires=[
        "pandas>=1.5",
        "numpy",
        "pyyaml",
        "pydantic>=2",
        "openai>=1.0",
        "anthropic",
        "python-dotenv",
    ],
    extras_require={
        "dev": ["pytest>=7.0"],
    },
    entry_points={
        "console_scripts": ["civicsim=civicsim_modules.src.cli:main"],
    },
    python_requires=">=3.9",
)
