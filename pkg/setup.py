"""Neurotheremin setup.

To install, using the command line do:
    pip install -e /path/to/neurotheremin

"""

from setuptools import setup

VERSION = '0.1.0'

setup(name='neurotheremin',
      version=VERSION,
      description=('Event-based hand tracking, spike transport and theremin '
                   'duet simulation.'),
      license='BSD-3-clause',
      packages=['neurotheremin'],
      install_requires=['numpy', 'scipy'],
      python_requires='>=3.8',
      entry_points={
          'console_scripts': ['neurotheremin=neurotheremin.cli:main']},
      zip_safe=False)
