//! Records a short program against versioned objects, runs it, and shows
//! how each call advanced the revision chains.

use dagflow::{ArgMode, Context, Layout};

fn main() -> dagflow::Result<()> {
    let mut ctx = Context::solo(2);
    let axpy = ctx.declare_kernel("axpy", vec![ArgMode::Mutable, ArgMode::Const], |a| {
        let (y, ins) = a.split_mut(0)?;
        let x = ins.f64(1)?;
        for (y, x) in y.as_f64_mut().ok_or("y is not f64")?.iter_mut().zip(x) {
            *y += 2.0 * x;
        }
        Ok(())
    })?;
    let fill = ctx.declare_kernel("fill", vec![ArgMode::Mutable], |a| {
        for (i, v) in a.f64_mut(0)?.iter_mut().enumerate() {
            *v = i as f64;
        }
        Ok(())
    })?;

    let x = ctx.unset(Layout::f64(4))?;
    let y = ctx.literal_f64(vec![1.0; 4])?;
    ctx.call(&fill, &[x])?;
    ctx.call(&axpy, &[y, x])?;
    ctx.call(&axpy, &[y, x])?;
    println!("x head = {}, y head = {}", ctx.head(x)?, ctx.head(y)?);
    println!("dag fingerprint {:016x}", ctx.dag().fingerprint());

    let y_val = ctx.fetch(y)?;
    println!("y = {:?}", y_val.as_f64().unwrap());

    let report = ctx.finish()?;
    println!("{}", report.to_json_line());
    Ok(())
}
