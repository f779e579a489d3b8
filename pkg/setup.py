import re
import multiprocessing
from setuptools import setup, find_packages


# import multiprocessing to avoid this bug (http://bugs.python.org/issue15881#msg170215)
assert multiprocessing


def get_version():
    """
    Extracts the version number from the version.py file.
    """
    VERSION_FILE = 'gaze_glass/version.py'
    mo = re.search(r'^__version__ = [\'"]([^\'"]*)[\'"]', open(VERSION_FILE, 'rt').read(), re.M)
    if mo:
        return mo.group(1)
    else:
        raise RuntimeError('Unable to find version string in {0}.'.format(VERSION_FILE))


def get_lines(file_path):
    return [line for line in open(file_path, 'r').read().split('\n') if line and not line.startswith('#')]


install_requires = get_lines('requirements/requirements.txt')
tests_require = get_lines('requirements/requirements-testing.txt')


setup(
    name='gaze-glass',
    version=get_version(),
    description='Self-supervised gaze forecasting and emotion-head fine-tuning on OpenFace gaze data',
    long_description=open('README.rst').read(),
    packages=find_packages(exclude=['examples', 'examples.*']),
    classifiers=[
        'Programming Language :: Python',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],
    license='MIT',
    python_requires='>=3.9',
    install_requires=install_requires,
    tests_require=tests_require,
    extras_require={'testing': tests_require},
    entry_points={
        'console_scripts': [
            'gaze-glass = gaze_glass.cli:main',
        ],
    },
    include_package_data=True,
    zip_safe=False,
)
