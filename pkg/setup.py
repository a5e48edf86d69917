from setuptools import setup

setup(
    name="rtlab",
    version="0.1.0",
    py_modules=[
        "analysis", "cli", "config", "context_features", "errors", "evaluation", "event_model",
        "features", "labeling", "physio_features", "prediction", "reports", "simulation", "utils",
    ],
    python_requires=">=3.10",
    install_requires=[
        "numpy>=1.26",
        "pandas>=2.2.3",
        "scipy>=1.11",
        "scikit-learn>=1.3",
        "joblib>=1.3",
        "pydantic>=2.5",
        "python-dotenv>=1.0.0",
        "openlocationcode>=1.0.1",
        "tomli>=2.0; python_version < '3.11'",
    ],
    entry_points={"console_scripts": ["rtlab=cli:main"]},
)
