"""Extract MovieLens-100k into data/ml-100k/ml-100k.inter.

The ratings ship inside the RecBole wheel as a tab-separated atomic file
(`user_id:token  item_id:token  rating:float  timestamp:float`). The
dataset licence forbids redistribution, so the file stays out of git.
"""

import pathlib
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def main():
    root = pathlib.Path(__file__).resolve().parent.parent
    target = root / "data" / "ml-100k" / "ml-100k.inter"
    if target.is_file():
        print(f"already present: {target}")
        return
    target.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "recbole==1.2.1", "-d", tmp],
            check=True,
        )
        wheel = next(pathlib.Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            target.write_bytes(zf.read(MEMBER))
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
