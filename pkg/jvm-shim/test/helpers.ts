import { ChildProcess, spawn } from "node:child_process";
import fs from "node:fs";
import os from "node:os";
import path from "node:path";

export const SHIM = path.resolve(import.meta.dirname, "..", "dist", "main.js");

const REPO_SRC = path.resolve(import.meta.dirname, "..", "..", "src");

export interface Finished {
  code: number;
  out: string;
  err: string;
}

function collect(proc: ChildProcess): Promise<Finished> {
  let out = "";
  let err = "";
  proc.stdout!.on("data", (d) => (out += d));
  proc.stderr!.on("data", (d) => (err += d));
  return new Promise((resolve, reject) => {
    proc.on("error", reject);
    proc.on("close", (code) => resolve({ code: code ?? -1, out, err }));
  });
}

/** Run the verifier CLI to completion; the shim only talks wire + files. */
export function runPy(args: string[]): Promise<Finished> {
  const proc = spawn("python3", ["-m", "bomi_guard", ...args], {
    env: { ...process.env, PYTHONPATH: REPO_SRC },
  });
  return collect(proc);
}

export function runShim(args: string[]): Promise<Finished> {
  return collect(spawn("node", [SHIM, ...args]));
}

export interface Watch {
  endpoint: string;
  stop: () => Promise<number>;
}

/** Start the watch service and wait for its "listening on" line. */
export function startWatch(bomi: string, extra: string[] = []): Promise<Watch> {
  const proc = spawn(
    "python3",
    ["-m", "bomi_guard", "watch", "--bomi", bomi, ...extra],
    { env: { ...process.env, PYTHONPATH: REPO_SRC } },
  );
  return new Promise((resolve, reject) => {
    let err = "";
    proc.stderr!.on("data", (chunk) => {
      err += chunk;
      const line = err.split("\n")[0];
      if (line.startsWith("listening on ")) {
        resolve({
          endpoint: line.slice("listening on ".length).trim(),
          stop: () => {
            proc.kill("SIGTERM");
            return new Promise((done) => proc.on("close", (code) => done(code ?? -1)));
          },
        });
      }
    });
    proc.on("error", reject);
    proc.on("close", (code) => reject(new Error(`watch exited early (${code}): ${err}`)));
  });
}

export interface Fixtures {
  root: string;
  /** fleet classes in load order: [name, classfile path][] */
  fleet: [string, string][];
  /** allowlist index covering exactly the fleet */
  bomi: string;
  /** parseable class absent from the index */
  evil: string;
  /** same name as fleet[0] but different content */
  tamperedMain: string;
}

/** Synthesize the class corpus once per suite with the verifier's own tool. */
export async function makeFixtures(): Promise<Fixtures> {
  const root = fs.mkdtempSync(path.join(os.tmpdir(), "jvm-shim-"));
  const synth = async (spec: object, dir: string) => {
    const specPath = path.join(root, `${dir}.json`);
    fs.writeFileSync(specPath, JSON.stringify(spec));
    const res = await runPy(["synth", specPath, "-o", path.join(root, dir)]);
    if (res.code !== 0) {
      throw new Error(`synth failed: ${res.err}`);
    }
  };

  await synth(
    {
      specs: [
        { name: "app/Main", utf8_constants: ["main"] },
        { name: "app/Helper", utf8_constants: ["helper"] },
        { name: "jdk/proxy1/$Proxy{n}", seed: 11 },
      ],
    },
    "fleet",
  );
  await synth({ specs: [{ name: "com/evil/xExportObject", utf8_constants: ["payload"] }] }, "evil");
  await synth({ specs: [{ name: "app/Main", utf8_constants: ["mutated"] }] }, "tampered");

  const bomi = path.join(root, "app.ndjson");
  const indexed = await runPy(["index-dynamic", path.join(root, "fleet"), "-o", bomi]);
  if (indexed.code !== 0) {
    throw new Error(`index-dynamic failed: ${indexed.err}`);
  }

  const manifest = JSON.parse(
    fs.readFileSync(path.join(root, "fleet", "manifest.json"), "utf8"),
  ) as { entries: { file: string; name: string }[] };
  const fleet = manifest.entries.map(
    (e) => [e.name, path.join(root, "fleet", e.file)] as [string, string],
  );
  return {
    root,
    fleet,
    bomi,
    evil: path.join(root, "evil", "0000.class"),
    tamperedMain: path.join(root, "tampered", "0000.class"),
  };
}

export function writeScenario(
  file: string,
  classes: { name: string; file: string; marker?: string; loader?: string }[],
): string {
  fs.writeFileSync(file, JSON.stringify({ classes }, null, 2));
  return file;
}

/** Names of the records in an NDJSON index part, in file order. */
export function partNames(file: string): string[] {
  return fs
    .readFileSync(file, "utf8")
    .split("\n")
    .filter((line) => line.trim() !== "")
    .map((line) => (JSON.parse(line) as { name: string }).name);
}
