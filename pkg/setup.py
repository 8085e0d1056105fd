#!/usr/bin/env python3

from setuptools import setup
# tox can't actually run python3 setup.py: https://github.com/tox-dev/tox/issues/96
#from gsprune import __version__
__version__ = '0.3dev'

setup(name='gsprune',
      version=__version__,
      description='learning-to-prune Gaussian splatting on a CPU, with importance scores and Gumbel-Sigmoid masks',
      long_description=open('README.md').read(),
      long_description_content_type='text/markdown',
      python_requires='>=3.8',
      scripts=['bin/gsprune'],
      entry_points={'console_scripts': [
          'gsprune=gsprune.main:gsprune_cli'
        ],
      },
      install_requires=[
          'numpy>=1.20',
          'plyfile',
          'pypng',
      ],
      packages=['gsprune', 'gsprune.loaders', 'gsprune.tests'],
      license='GPLv3',
      classifiers=[
          'Development Status :: 3 - Alpha',
          'Environment :: Console',
          'Intended Audience :: Science/Research',
          'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
          'Operating System :: OS Independent',
          'Programming Language :: Python :: 3',
          'Topic :: Scientific/Engineering :: Image Processing',
          'Topic :: Multimedia :: Graphics :: 3D Rendering',
      ],
      keywords=('gaussian splatting pruning gumbel-sigmoid 3dgs ply'),
      )
