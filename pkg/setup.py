#! /usr/bin/env python3
# -*- coding: utf-8 -*-
import os.path as op
from setuptools import setup, find_packages

version = {}
with open("linbpi/version.py") as fp:
    exec(fp.read(), version)

here = op.abspath(op.dirname(__file__))

short_description = 'Best-policy identification in linear MDPs ' \
                    'with a generative model'
long_description = short_description

setup(name='linbpi', version=version['__version__'],
      description=short_description,
      long_description=long_description,
      author='Thomas Vincent', license='MIT',
      classifiers=['Development Status :: 3 - Alpha',
                   'Intended Audience :: Science/Research',
                   'License :: OSI Approved :: MIT License',
                   'Natural Language :: English',
                   'Operating System :: POSIX :: Linux',
                   'Operating System :: MacOS',
                   'Operating System :: Microsoft :: Windows',
                   'Programming Language :: Python :: 3.8',],
      keywords='reinforcement learning, linear MDP, best-policy '
               'identification, optimal design',
      packages=find_packages(exclude=['test']),
      package_data={'linbpi': ['data/*.json']},
      python_requires='>=3.7',
      install_requires=['numpy', 'scipy', 'pandas', 'matplotlib',
                        'importlib_resources; python_version < "3.9"'],
      extras_require={'test': ['pytest']},
      entry_points={
          'console_scripts': [
              'linbpi = linbpi.commands.linbpi:main',
          ],
      })
