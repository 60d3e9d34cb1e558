from setuptools import find_packages, setup

with open('README.rst') as f:
    readme = f.read()

setup(
    name='pde_discovery',
    version='1.0.0',
    description='Discovery of a shared partial differential equation from multiple noisy experiments',
    long_description=readme,
    packages=find_packages(exclude=['tests']),
    package_data={'pde_discovery': ['runspec_schema.yml', 'case_lookup.json']},
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.20',
        'scipy>=1.7',
        'torch>=1.10',
        'pandas>=1.3',
        'joblib>=1.0',
        'click>=7.0',
        'PyYAML>=5.3',
        'jsonschema>=3.2.0',
    ],
    entry_points={
        'console_scripts': ['pde-discovery=pde_discovery.cli:cli'],
    },
)
