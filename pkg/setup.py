from setuptools import find_packages, setup
from typing import List

HYPEN_E_DOT = '-e .'
TEST_ONLY = {'pytest', 'hypothesis', 'httpx'}

def get_requirements(path: str) -> List[str]:
    requirements = []
    with open(path) as file:
        requirements = file.readlines()
        requirements = [req.replace('\n', '') for req in requirements if req.strip()]
        if HYPEN_E_DOT in requirements:
            requirements.remove(HYPEN_E_DOT)
    return [req for req in requirements if req not in TEST_ONLY]

setup(
    name='restgen',
    version='0.1.0',
    packages=find_packages(exclude=['tests', 'tests.*', 'examples', 'examples.*']),
    package_data={'core': ['schemas/*.json']},
    install_requires=get_requirements('requirements.txt'),
    extras_require={'test': sorted(TEST_ONLY)},
    entry_points={'console_scripts': ['restgen=cli.main:app']},
    python_requires='>=3.10',
    description='LLM-driven generation and execution of REST API test suites from OpenAPI documents',
    long_description=open('README.md').read(),
    long_description_content_type='text/markdown',
)
