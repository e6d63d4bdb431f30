//! Dataset serialization: one meta record, then one record per trajectory.

use super::{Dataset, TrajStep, Trajectory};
use crate::error::{Error, Result};
use crate::io::{Container, ContainerWriter, RecordReader, RecordWriter};
use crate::sim::{Action8, Image, Observation, Phase, TaskId};
use std::path::Path;

const META_KIND: &str = "lvla.dataset";

fn put_image(w: &mut RecordWriter, img: &Image) {
    w.put_tensor(&[img.h, img.w, 3], &img.data);
}

fn get_image(r: &mut RecordReader) -> Result<Image> {
    let (shape, data) = r.get_tensor()?;
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::Format(format!("bad image shape {shape:?}")));
    }
    Ok(Image { h: shape[0], w: shape[1], data })
}

fn put_step(w: &mut RecordWriter, s: &TrajStep) {
    put_image(w, &s.obs.static_img);
    put_image(w, &s.obs.gripper_img);
    w.put_tensor(&[8], &s.obs.proprio);
    let a: Vec<f32> = s.action.to_array().iter().map(|&v| v as f32).collect();
    w.put_tensor(&[8], &a);
    w.put_u8(match s.phase {
        Phase::Moving => 0,
        Phase::Interaction => 1,
    });
    match s.bbox {
        Some(b) => {
            w.put_u8(1);
            for v in b {
                w.put_f32(v as f32);
            }
        }
        None => w.put_u8(0),
    }
}

fn get_step(r: &mut RecordReader) -> Result<TrajStep> {
    let static_img = get_image(r)?;
    let gripper_img = get_image(r)?;
    let (pshape, pdata) = r.get_tensor()?;
    if pshape != [8] {
        return Err(Error::Format(format!("bad proprio shape {pshape:?}")));
    }
    let mut proprio = [0f32; 8];
    proprio.copy_from_slice(&pdata);
    let (ashape, adata) = r.get_tensor()?;
    if ashape != [8] {
        return Err(Error::Format(format!("bad action shape {ashape:?}")));
    }
    let mut arr = [0f64; 8];
    for (i, v) in adata.iter().enumerate() {
        arr[i] = *v as f64;
    }
    let phase = match r.get_u8()? {
        0 => Phase::Moving,
        1 => Phase::Interaction,
        p => return Err(Error::Format(format!("bad phase tag {p}"))),
    };
    let bbox = match r.get_u8()? {
        0 => None,
        1 => {
            let mut b = [0f64; 4];
            for v in &mut b {
                *v = r.get_f32()? as f64;
            }
            Some(b)
        }
        t => return Err(Error::Format(format!("bad bbox flag {t}"))),
    };
    Ok(TrajStep {
        obs: Observation { static_img, gripper_img, proprio },
        action: Action8::from_array(arr),
        phase,
        bbox,
    })
}

fn put_opt_string(w: &mut RecordWriter, s: &Option<String>) {
    match s {
        Some(s) => {
            w.put_u8(1);
            w.put_string(s);
        }
        None => w.put_u8(0),
    }
}

fn get_opt_string(r: &mut RecordReader) -> Result<Option<String>> {
    Ok(match r.get_u8()? {
        0 => None,
        _ => Some(r.get_string()?),
    })
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = ContainerWriter::create(path)?;
    let mut meta = RecordWriter::new();
    meta.put_string(META_KIND);
    meta.put_u64(ds.seed);
    meta.put_u64(ds.trajectories.len() as u64);
    out.write_record(&meta.into_bytes())?;
    for t in &ds.trajectories {
        let mut w = RecordWriter::new();
        w.put_string(t.task_id.name());
        w.put_u64(t.seed);
        w.put_u64(t.cutting_point as u64);
        w.put_u64(t.t_star as u64);
        put_opt_string(&mut w, &t.instr_move);
        put_opt_string(&mut w, &t.instr_interact);
        w.put_u32(t.steps.len() as u32);
        for s in &t.steps {
            put_step(&mut w, s);
        }
        out.write_record(&w.into_bytes())?;
    }
    out.finish()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset> {
    let c = Container::open(path)?;
    if c.is_empty() {
        return Err(Error::Format("dataset container has no meta record".into()));
    }
    let mut meta = c.record(0);
    let kind = meta.get_string()?;
    if kind != META_KIND {
        return Err(Error::Format(format!("expected {META_KIND}, found '{kind}'")));
    }
    let seed = meta.get_u64()?;
    let declared = meta.get_u64()? as usize;
    if declared != c.len() - 1 {
        return Err(Error::Format(format!(
            "meta declares {declared} trajectories, container holds {}",
            c.len() - 1
        )));
    }
    let mut trajectories = Vec::with_capacity(declared);
    for i in 1..c.len() {
        let mut r = c.record(i);
        let task_id = TaskId::parse(&r.get_string()?)
            .map_err(|e| Error::Format(format!("record {i}: {e}")))?;
        let tseed = r.get_u64()?;
        let cutting_point = r.get_u64()? as usize;
        let t_star = r.get_u64()? as usize;
        let instr_move = get_opt_string(&mut r)?;
        let instr_interact = get_opt_string(&mut r)?;
        let n = r.get_u32()? as usize;
        let mut steps = Vec::with_capacity(n);
        for _ in 0..n {
            steps.push(get_step(&mut r)?);
        }
        trajectories.push(Trajectory {
            steps,
            task_id,
            cutting_point,
            t_star,
            instr_move,
            instr_interact,
            seed: tseed,
        });
    }
    Ok(Dataset { trajectories, seed })
}
