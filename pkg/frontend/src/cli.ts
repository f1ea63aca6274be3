#!/usr/bin/env node
/**
 * plot <kind> --in <csv>[:label] ... --out <img>
 *
 * kinds: accuracy-curves | spectrum | sweep-bars
 * exit codes: 0 success, 1 schema error, 2 I/O error
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { SchemaError, parseInputArg } from "./csv.js";
import { accuracyCurvesOption, spectrumOption, sweepBarsOption } from "./plots.js";
import { OutputError, writeImage } from "./render.js";

const BUILDERS = {
  "accuracy-curves": accuracyCurvesOption,
  spectrum: spectrumOption,
  "sweep-bars": sweepBarsOption,
} as const;

type Kind = keyof typeof BUILDERS;

export function run(argv: string[]): number {
  const args = yargs(argv)
    .usage("plot <kind> --in <csv>[:label] ... --out <img>")
    .command("$0 <kind>", "render a figure from simulator CSVs", (y) =>
      y.positional("kind", { choices: Object.keys(BUILDERS) as Kind[], type: "string" }),
    )
    .option("in", { type: "string", array: true, demandOption: true, describe: "input CSV path, optionally path:label" })
    .option("out", { type: "string", demandOption: true, describe: "output image path (.svg)" })
    .strict()
    .exitProcess(false)
    .fail((msg) => {
      throw new OutputError(msg);
    })
    .parseSync();

  const kind = args.kind as Kind;
  const inputs = (args.in as string[]).map(parseInputArg);
  try {
    const option = BUILDERS[kind](inputs);
    writeImage(option, args.out as string);
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`schema error: ${err.message}`);
      return 1;
    }
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
  console.log(`wrote ${args.out}`);
  return 0;
}

const isMain = process.argv[1]?.endsWith("cli.js");
if (isMain) {
  let code: number;
  try {
    code = run(hideBin(process.argv));
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    code = 2;
  }
  process.exit(code);
}
