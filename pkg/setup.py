from importlib.machinery import SourceFileLoader
from pathlib import Path
from setuptools import setup

THIS_DIR = Path(__file__).resolve().parent
long_description = THIS_DIR.joinpath('README.rst').read_text()

# avoid loading the package before requirements are installed:
version = SourceFileLoader("__version__", "eit_shapes/__init__.py").load_module()

name = 'eit-shapes'

setup(
    name=name,
    version=version.__version__,
    description='Shape reconstruction of piecewise constant conductivities from EIT boundary data',
    long_description=long_description,
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Operating System :: POSIX :: Linux',
        'Operating System :: Unix',
        'Environment :: MacOS X',
        'Topic :: Scientific/Engineering :: Mathematics',
        'Topic :: Scientific/Engineering :: Physics',
    ],
    license='MIT',
    package_data={
        'eit_shapes': ['phantoms.json'],
    },
    packages=[
        'eit_shapes',
        'eit_shapes.recon',
    ],
    zip_safe=True,
    entry_points="""
        [console_scripts]
        eitsh=eit_shapes.cli:cli
        eit-shapes=eit_shapes.cli:cli
    """,
    install_requires=[
        'click>=6.6',
        'devtools>=0.6',
        'Pygments>=2.2.0',
        'numpy>=1.22',
        'scipy>=1.12',
        'shapely>=2.0',
        'triangle>=20230923',
    ],
    python_requires='>=3.9',
)
