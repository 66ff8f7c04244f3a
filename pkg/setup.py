import codecs
import glob
from setuptools import setup, find_packages
from os.path import abspath, dirname, join

here = abspath(dirname(__file__))

with codecs.open(join(here, 'README.md'), encoding='utf-8') as f:
    README = f.read()

reqs = ['numpy>=1.22', 'scipy>=1.12', 'pandas>=1.5']

utils = glob.glob('pyesreg-utils/*.py')

__version__ = None
exec(open('pyesreg/_version.py').read())  # load the actual __version__

setup(
    name='pyesreg',
    version=__version__,
    url='https://pypi.org/project/pyesreg/',
    description='Joint regression of Value-at-Risk and Expected Shortfall.',
    long_description=README,
    long_description_content_type='text/markdown',
    license='MIT',
    classifiers=[
        'Intended Audience :: Science/Research',
        'Intended Audience :: Financial and Insurance Industry',
        'Topic :: Scientific/Engineering :: Mathematics',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
    ],
    keywords='expected shortfall value-at-risk quantile regression m-estimation risk',
    python_requires='>=3.9',
    install_requires=reqs,
    extras_require={'fast-json': ['ujson'],
                    'test': ['pytest', 'pytest-cov', 'coverage', 'jsonschema>=4.0']},
    package_data={'pyesreg': ['schemas/*.json']},
    scripts=utils,
    entry_points={'console_scripts': ['pyesreg=pyesreg.cli:main']},
    tests_require=['pytest', 'pytest-cov', 'coverage', 'jsonschema>=4.0'],
    packages=find_packages(exclude=['tests', 'tests.*']),
    zip_safe=False,
)
