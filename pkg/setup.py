from setuptools import setup, find_packages

setup(name='nlielab',
      version='0.1',
      description='Multi-species nonlocal interaction gradient flows on epsilon-localizing graphs',
      packages=find_packages(exclude=['tests']),
      py_modules=['run_lab_cli'],
      zip_safe=False,
      python_requires='>=3.11',
      install_requires=[
          'numpy', 'scipy', 'pyparsing', 'matplotlib'
      ],
      extras_require={
          'test': ['pytest']
      },
      entry_points={
          'console_scripts': ['nlielab=run_lab_cli:main']
      }
      )
